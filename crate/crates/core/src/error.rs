use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:e} in column {column}")]
    SingularMatrix { pivot: f64, column: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite derivative at t = {t}")]
    NonFiniteDerivative { t: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-positive value {value} at t = {t}")]
    NonPositiveValue { t: f64, value: f64 },

    #[error("no reference solution x* configured")]
    MissingReference,

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularMatrix { .. } => "SingularMatrix",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DomainError(_) => "DomainError",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::StepSizeUnderflow { .. } => "StepSizeUnderflow",
            Error::NonFiniteDerivative { .. } => "NonFiniteDerivative",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InsufficientData(_) => "InsufficientData",
            Error::NonPositiveValue { .. } => "NonPositiveValue",
            Error::MissingReference => "MissingReference",
            Error::HypothesisViolated(_) => "HypothesisViolated",
        }
    }
}
