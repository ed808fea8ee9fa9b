use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad matrix header: {0}")]
    BadMagic(String),

    #[error("matrix payload size mismatch: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("correctness gate failed: {0}")]
    Correctness(String),

    #[error("internal solver error: {0}")]
    Internal(String),
}

impl Error {
    /// Stable machine-readable prefix used on the diagnostic stream.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INPUT",
            Error::Dimension(_) => "E_DIM",
            Error::Numerical(_) => "E_NUMERIC",
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } | Error::BadMagic(_) | Error::Truncated { .. } => "E_FORMAT",
            Error::Correctness(_) => "E_CORRECTNESS",
            Error::Internal(_) => "E_INTERNAL",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
