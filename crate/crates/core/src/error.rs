use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the tensor engine, attention layers, data pipeline and trainer.
#[derive(Debug, Error)]
pub enum SemError {
    /// An argument violated an operation's precondition (shape, range, parity).
    #[error("domain error: {0}")]
    Domain(String),

    /// A dataset file did not match the expected binary layout.
    #[error("ingestion error in {path}: {message} (byte offset {offset})")]
    Ingestion {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// A checkpoint failed validation.
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    /// Training produced a NaN or infinite value.
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    /// A configuration value or command-line argument was invalid.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SemError {
    pub fn domain(msg: impl Into<String>) -> Self {
        SemError::Domain(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        SemError::Usage(msg.into())
    }
}

pub type Result<T, E = SemError> = std::result::Result<T, E>;
