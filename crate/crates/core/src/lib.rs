//! Differentially private collaborative relaying for distributed mean
//! estimation over intermittently connected networks.
//!
//! Nodes that cannot reliably reach a parameter server (PS) forward scaled,
//! noise-perturbed copies of their neighbors' vectors. The crate provides
//!
//! - [`network`]: the Bernoulli link model and topology generators,
//! - [`scheme`]: weights, noise levels, trust constraints and datasets,
//! - [`protocol`]: the two-stage relaying protocol and Monte-Carlo runs,
//! - [`analysis`]: the MSE upper bound and an exact small-n oracle,
//! - [`privacy`]: link, relay and PS level privacy accounting,
//! - [`optimizer`]: projected gradient descent over the privacy cone,
//! - [`erdos_renyi`]: the closed-form symmetric solution,
//! - [`apps`]: experiment harnesses and distributed k-means.

pub mod analysis;
pub mod apps;
pub mod erdos_renyi;
pub mod error;
pub mod network;
pub mod optimizer;
pub mod privacy;
pub mod protocol;
pub mod scheme;
pub mod serde_matrix;

pub use analysis::{bound, exact_mse, piv, s_vector, tiv, MseBreakdown};
pub use error::{Error, RelayFailure, Result};
pub use network::{LinkRealization, NetworkModel};
pub use optimizer::{optimize, BiasNorm, OptimizerConfig, OptimizerTrace};
pub use privacy::{Epsilon, PrivacyReport};
pub use protocol::{monte_carlo_mse, run_round, MonteCarloEstimate, RoundOutcome};
pub use scheme::{CollaborationScheme, Dataset, TrustMatrix};
