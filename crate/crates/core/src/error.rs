use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor order mismatch: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },

    #[error("expected a unit vector, got ({0}, {1})")]
    NonUnitVector(f64, f64),

    #[error("tensor is identically zero; no direction is defined")]
    ZeroTensor,

    #[error("grid {nx}x{ny} is too small for order {m} (need at least {min} nodes per side)")]
    GridTooSmall { nx: usize, ny: usize, m: usize, min: usize },

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stripe leaves the grid: {0}")]
    StripeOutsideGrid(String),

    #[error("admissible region is empty; the exclusion parameters exhaust the image")]
    EmptyAdmissibleRegion,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("operator is not positive definite (curvature {curvature:e} at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
