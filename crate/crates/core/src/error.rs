//! Error type shared by every module.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A state, gradient, or accumulated quantity stopped being finite.
    #[error("non-finite value at step {index}: {what}")]
    NonFinite { index: usize, what: &'static str },

    #[error("value {value} overflows a 64-bit float")]
    Overflow { value: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block factorization broke down at shift {shift:e}")]
    FactorizationBreakdown { shift: f64 },

    #[error("eigensolver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("dense problem of size {size} exceeds the limit {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("optimizer diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("expected an extended-precision trace")]
    PrecisionMismatch,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(msg)
}
