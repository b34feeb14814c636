use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed line-oriented text input.
    #[error("{source_name}:{line}: {message}")]
    ParseText {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Malformed or truncated binary input.
    #[error("{source_name}: byte offset {offset}: {message}")]
    ParseBinary {
        source_name: String,
        offset: u64,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("augmentation error: {0}")]
    Augmentation(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Validation(_) => ErrorClass::Config,
            Error::ParseText { .. }
            | Error::ParseBinary { .. }
            | Error::Data(_)
            | Error::Augmentation(_)
            | Error::Io { .. } => ErrorClass::Data,
        }
    }
}
