use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("bundle format error at byte {offset}: {message}")]
    Bundle { offset: usize, message: String },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] percgest_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit status for each failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub(crate) fn bundle(offset: usize, message: impl Into<String>) -> Self {
        Error::Bundle { offset, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Core(percgest_core::Error::Numeric(_)) => exit::NUMERIC,
            Error::Core(percgest_core::Error::InvalidArgument(_) | percgest_core::Error::Unsupported(_)) => exit::USAGE,
            _ => exit::DATA,
        }
    }
}
