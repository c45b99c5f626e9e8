use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlipError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("autodiff usage error: {0}")]
    Usage(String),

    #[error("malformed table: {0}")]
    Table(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FlipError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlipError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = FlipError> = std::result::Result<T, E>;
