use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the enhancement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing regime {regime} in {context}")]
    MissingRegime { regime: String, context: String },

    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("audio error for {path}: {message}")]
    Audio { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
