use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid network model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset violates the radius bound: row {row} has norm {norm} > {radius}")]
    RadiusViolation { row: usize, norm: f64, radius: f64 },

    #[error("exact oracle supports at most {max} nodes, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("relay {relay}: mean aggregated variance {mean_variance} does not exceed deviation radius {radius}")]
    NoRelayGuarantee {
        relay: usize,
        mean_variance: f64,
        radius: f64,
    },

    #[error("central privacy preconditions failed for node {node}: {failures:?}")]
    CompositionPrecondition {
        node: usize,
        failures: Vec<RelayFailure>,
    },

    #[error("parameters outside the valid regime: {0}")]
    InvalidRegime(String),

    #[error("quantity is unbounded: {0}")]
    Unbounded(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("initial scheme is infeasible ({0} violated links)")]
    InfeasibleStart(usize),

    #[error("objective became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<crate::optimizer::OptimizerTrace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::RadiusViolation { .. } => "radius_violation",
            Error::OracleTooLarge { .. } => "oracle_too_large",
            Error::NoRelayGuarantee { .. } => "no_relay_guarantee",
            Error::CompositionPrecondition { .. } => "composition_precondition",
            Error::InvalidRegime(_) => "invalid_regime",
            Error::Unbounded(_) => "unbounded",
            Error::Undefined(_) => "undefined",
            Error::InfeasibleStart(_) => "infeasible_start",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

/// A relay whose contribution to a composed guarantee could not be certified.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RelayFailure {
    pub relay: usize,
    /// Human-readable statement of the inequality that failed.
    pub inequality: String,
    /// Left-hand side minus right-hand side of the failing inequality.
    pub slack: f64,
}

pub type Result<T> = std::result::Result<T, Error>;
