use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value: {context}")]
    NonFinite { context: String },

    /// A configuration value is out of range or inconsistent. `key` is the
    /// dotted path of the offending field.
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("round {t} out of range for a {total}-round schedule")]
    RoundOutOfRange { t: usize, total: usize },

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numeric check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 numeric, 4 failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::RoundOutOfRange { .. } => 2,
            Error::NonFinite { .. } | Error::DimensionMismatch { .. } | Error::Aggregation(_) => 3,
            Error::Check(_) => 4,
            Error::Io(_) => 1,
        }
    }
}
