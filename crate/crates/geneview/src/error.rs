//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("join error: no text entry for variant ids {0:?}")]
    MissingText(Vec<u64>),

    #[error("feature space mismatch: expected `{expected}`, got `{actual}`")]
    SpaceMismatch { expected: String, actual: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing resource: {0}")]
    MissingResource(String),

    #[error("model file {path}: {message}")]
    ModelFormat { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for bad input, 3 for internal faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::MissingText(_)
            | Error::Config(_)
            | Error::MissingResource(_)
            | Error::Io { .. } => 2,
            Error::SpaceMismatch { .. } | Error::ShapeMismatch(_) | Error::ModelFormat { .. } => 3,
        }
    }
}
