use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },

    #[error("incompatible grids: {0}")]
    GridMismatch(String),

    #[error("point {0:?} lies outside the computational box")]
    OutsideDomain(Vec<f64>),

    #[error("non-integrable singularity at node {node}: local exponent {exponent:.4} >= dimension {dim}")]
    NonIntegrable { node: usize, exponent: f64, dim: usize },

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("cap violated at step {step}, node {node}: u = {value:e} exceeds cap {cap:e}")]
    CapViolation { step: usize, node: usize, value: f64, cap: f64 },

    #[error("monotonicity violated at step {step}, node {node}: decrease {decrease:e}")]
    MonotonicityViolation { step: usize, node: usize, decrease: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
