use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DccError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DccError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DccError::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        DccError::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DccError::Config(msg.into())
    }
}

pub type Result<T, E = DccError> = std::result::Result<T, E>;
