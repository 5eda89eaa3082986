//! Shared error and result types.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated (dimension mismatch,
    /// out-of-range index, malformed interval, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A numerical operation failed beyond the jitter policy
    /// (indefinite covariance, singular system, ...).
    #[error("numerical: {0}")]
    Numerical(String),

    /// A Markov chain could not be started from an in-set state.
    #[error("chain initialization: {0}")]
    Initialization(String),

    /// A density grid is too coarse to reach the requested mass.
    #[error("resolution: {0}")]
    Resolution(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
