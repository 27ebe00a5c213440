use thiserror::Error;

/// Error type shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A data file could not be parsed; carries the 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: u64,
        msg: String,
    },

    /// Estimation problem has no usable solution (e.g. constant regressor).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The training objective became non-finite; the run is aborted rather
    /// than silently clipped.
    #[error("non-finite objective at phase {phase}, step {step}")]
    NonFiniteObjective { phase: usize, step: u64 },

    /// A gradient entry was NaN or infinite.
    #[error("non-finite gradient entry at coordinate {index}")]
    NonFiniteGradient { index: usize },

    /// Checkpoint file did not match the expected format.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
