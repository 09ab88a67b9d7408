use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the re-ranking engine.
#[derive(Debug, Error)]
pub enum QderError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl QderError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QderError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        QderError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for this error class: 1 data/validation, 2 I/O, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            QderError::Io { .. } => 2,
            QderError::Numeric(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, QderError>;
