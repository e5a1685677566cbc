//! Error type shared by all library modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition
    /// (shape mismatch, empty input, out-of-range field).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is outside its documented domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A numeric consistency check failed (non-finite activation,
    /// imaginary residue above tolerance, oracle failure).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged or could not proceed.
    #[error("training error at step {step}: {msg}")]
    Train { step: usize, msg: String },

    /// Checkpoint container is malformed or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
