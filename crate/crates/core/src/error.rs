//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the model, the bounds and the experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coincident points: {0}")]
    CoincidentPoints(&'static str),

    #[error("elevation singularity: |elevation| = pi/2 leaves azimuth undefined")]
    ElevationSingularity,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular information matrix: no information along {direction}")]
    SingularMatrix { direction: String },

    #[error("finite-difference step underflow for parameter {0}")]
    StepUnderflow(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trend check failed: {0}")]
    TrendCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
