use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("index {index} out of range for {what} (size {size})")]
    OutOfRange { what: &'static str, index: usize, size: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("text encoder failure: {0}")]
    Encoder(String),

    #[error("missing artifact {path}: run `{command}` first")]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
