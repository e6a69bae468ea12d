//! Decision variables, trust constraints and local datasets.
//!
//! A [`CollaborationScheme`] fixes how much weight `α_ij` node `i` puts on the
//! copy of its vector it sends to node `j`, and the standard deviation `σ_ij`
//! of the Gaussian noise added on that link. A [`TrustMatrix`] states the
//! local privacy each link must satisfy; geometrically every link must lie in
//! the cone `σ_ij ≥ β_ij α_ij`.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::serde_matrix;

/// Weight matrix `A` and noise standard deviations `Σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeConfig", into = "SchemeConfig")]
pub struct CollaborationScheme {
    alpha: Array2<f64>,
    sigma: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct SchemeConfig {
    #[serde(rename = "A", with = "serde_matrix::matrix")]
    alpha: Array2<f64>,
    #[serde(rename = "Sigma", with = "serde_matrix::matrix")]
    sigma: Array2<f64>,
}

impl TryFrom<SchemeConfig> for CollaborationScheme {
    type Error = Error;

    fn try_from(c: SchemeConfig) -> Result<Self> {
        Self::new(c.alpha, c.sigma)
    }
}

impl From<CollaborationScheme> for SchemeConfig {
    fn from(s: CollaborationScheme) -> Self {
        Self {
            alpha: s.alpha,
            sigma: s.sigma,
        }
    }
}

impl CollaborationScheme {
    pub fn new(alpha: Array2<f64>, sigma: Array2<f64>) -> Result<Self> {
        let (n, m) = alpha.dim();
        if n != m || sigma.dim() != (n, n) {
            return Err(Error::Dimension(format!(
                "weights {:?} and noise {:?} must be equal square matrices",
                alpha.dim(),
                sigma.dim()
            )));
        }
        for ((i, j), &a) in alpha.indexed_iter() {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidParameter(format!("alpha[{i}][{j}] = {a}")));
            }
        }
        for ((i, j), &s) in sigma.indexed_iter() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidParameter(format!("sigma[{i}][{j}] = {s}")));
            }
        }
        Ok(Self { alpha, sigma })
    }

    /// `A = I`, `Σ = 0`: every node sends only its own vector.
    pub fn identity(n: usize) -> Self {
        Self {
            alpha: Array2::eye(n),
            sigma: Array2::zeros((n, n)),
        }
    }

    /// Same as [`Self::new`] and additionally rejects weight on links with `p_ij = 0`.
    pub fn for_model(model: &NetworkModel, alpha: Array2<f64>, sigma: Array2<f64>) -> Result<Self> {
        let s = Self::new(alpha, sigma)?;
        s.check_support(model)?;
        Ok(s)
    }

    pub fn check_support(&self, model: &NetworkModel) -> Result<()> {
        if self.n() != model.n() {
            return Err(Error::Dimension(format!(
                "scheme has {} nodes, model has {}",
                self.n(),
                model.n()
            )));
        }
        for ((i, j), &a) in self.alpha.indexed_iter() {
            if a > 0.0 && model.links()[[i, j]] == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "alpha[{i}][{j}] = {a} on a link that never succeeds"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.alpha, self.sigma)
    }

    /// Relabels nodes: node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        crate::network::check_permutation(perm, self.n())?;
        let n = self.n();
        let pick = |m: &Array2<f64>| Array2::from_shape_fn((n, n), |(a, b)| m[[perm[a], perm[b]]]);
        Self::new(pick(&self.alpha), pick(&self.sigma))
    }
}

/// Per-link privacy requirements `(ε̲_ij, δ̲_ij)`.
///
/// `ε̲_ij = +∞` marks a fully trusted link. Self links are always trusted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrustConfig", into = "TrustConfig")]
pub struct TrustMatrix {
    eps: Array2<f64>,
    delta: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrustConfig {
    #[serde(with = "serde_matrix::extended_matrix")]
    eps: Array2<f64>,
    #[serde(with = "serde_matrix::matrix")]
    delta: Array2<f64>,
}

impl TryFrom<TrustConfig> for TrustMatrix {
    type Error = Error;

    fn try_from(c: TrustConfig) -> Result<Self> {
        Self::new(c.eps, c.delta)
    }
}

impl From<TrustMatrix> for TrustConfig {
    fn from(t: TrustMatrix) -> Self {
        Self {
            eps: t.eps,
            delta: t.delta,
        }
    }
}

impl TrustMatrix {
    pub fn new(eps: Array2<f64>, delta: Array2<f64>) -> Result<Self> {
        let (n, m) = eps.dim();
        if n != m || delta.dim() != (n, n) {
            return Err(Error::Dimension(format!(
                "trust eps {:?} and delta {:?} must be equal square matrices",
                eps.dim(),
                delta.dim()
            )));
        }
        for ((i, j), &e) in eps.indexed_iter() {
            if e.is_nan() || e <= 0.0 {
                return Err(Error::InvalidParameter(format!("eps[{i}][{j}] = {e} must be positive")));
            }
        }
        for ((i, j), &d) in delta.indexed_iter() {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidParameter(format!("delta[{i}][{j}] = {d} not in (0, 1]")));
            }
        }
        Ok(Self { eps, delta })
    }

    /// Same `(ε, δ)` on every off-diagonal link.
    pub fn uniform(n: usize, eps: f64, delta: f64) -> Result<Self> {
        Self::new(
            Array2::from_shape_fn((n, n), |(i, j)| if i == j { f64::INFINITY } else { eps }),
            Array2::from_elem((n, n), delta),
        )
    }

    pub fn n(&self) -> usize {
        self.eps.nrows()
    }

    pub fn eps(&self) -> &Array2<f64> {
        &self.eps
    }

    pub fn delta(&self) -> &Array2<f64> {
        &self.delta
    }

    /// `β_ij = (2R/ε̲_ij) sqrt(2 ln(1.25/δ̲_ij))`, zero on the diagonal and on fully trusted links.
    pub fn cone_slope(&self, radius: f64, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        cone_slope(radius, self.eps[[i, j]], self.delta[[i, j]])
    }

    /// All slopes as a matrix.
    pub fn slopes(&self, radius: f64) -> Array2<f64> {
        let n = self.n();
        Array2::from_shape_fn((n, n), |(i, j)| self.cone_slope(radius, i, j))
    }
}

/// Slope of the privacy cone for a single `(ε, δ)` requirement.
pub fn cone_slope(radius: f64, eps: f64, delta: f64) -> f64 {
    if eps == f64::INFINITY {
        return 0.0;
    }
    2.0 * radius / eps * (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Outcome of a feasibility check.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Feasibility {
    /// Links `(i, j)` with `σ_ij < β_ij α_ij`.
    pub violations: Vec<(usize, usize)>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `σ_ij ≥ β_ij α_ij` on every link, with no tolerance.
pub fn check_feasibility(
    scheme: &CollaborationScheme,
    trust: &TrustMatrix,
    radius: f64,
) -> Result<Feasibility> {
    check_feasibility_tol(scheme, trust, radius, 0.0)
}

/// Like [`check_feasibility`] but accepts `σ_ij ≥ β_ij α_ij - tol`.
pub fn check_feasibility_tol(
    scheme: &CollaborationScheme,
    trust: &TrustMatrix,
    radius: f64,
    tol: f64,
) -> Result<Feasibility> {
    if scheme.n() != trust.n() {
        return Err(Error::Dimension(format!(
            "scheme has {} nodes, trust matrix has {}",
            scheme.n(),
            trust.n()
        )));
    }
    let violations = scheme
        .alpha()
        .indexed_iter()
        .filter(|&((i, j), &a)| scheme.sigma()[[i, j]] < trust.cone_slope(radius, i, j) * a - tol)
        .map(|(ij, _)| ij)
        .collect();
    Ok(Feasibility { violations })
}

/// Local vectors, one row per node, with a norm bound `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    radius: f64,
}

impl Dataset {
    pub fn new(x: Array2<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("radius {radius}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset has non-finite entries".into()));
        }
        for (row, r) in x.axis_iter(Axis(0)).enumerate() {
            let norm = r.dot(&r).sqrt();
            if norm > radius * (1.0 + 1e-12) {
                return Err(Error::RadiusViolation { row, norm, radius });
            }
        }
        Ok(Self { x, radius })
    }

    /// Uses the largest row norm as the radius.
    pub fn with_computed_radius(x: Array2<f64>) -> Result<Self> {
        let radius = x
            .axis_iter(Axis(0))
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        Self::new(x, radius)
    }

    /// Reads a headerless CSV with one row per node.
    pub fn from_csv(path: impl AsRef<Path>, radius: Option<f64>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::InvalidParameter(format!("bad CSV value {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let x = serde_matrix::from_rows(&rows).map_err(Error::Dimension)?;
        match radius {
            Some(r) => Self::new(x, r),
            None => Self::with_computed_radius(x),
        }
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// The target `x̄ = (1/n) Σ x_i`.
    pub fn mean(&self) -> Array1<f64> {
        self.x
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.dim()))
    }
}
