use thiserror::Error;

/// Errors produced by the transport solvers and measure constructors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("measure has empty support or non-positive total weight")]
    EmptySupport,

    #[error("negative weight {value} at atom {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("marginal weight at index {0} is zero")]
    ZeroMarginal(usize),

    #[error("measure mismatch: {0}")]
    MeasureMismatch(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Laguerre cell of atom {atom} is empty and the tolerance is unreachable (residual {residual:e})")]
    EmptyCell { atom: usize, residual: f64 },

    #[error("problem size {size} exceeds the limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("atom with norm {norm} lies outside the ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },

    #[error("unsupported density: {0}")]
    UnsupportedDensity(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
