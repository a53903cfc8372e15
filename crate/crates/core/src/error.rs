use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used for CLI exit codes and the C ABI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Data,
    Config,
    Model,
    Invalid,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("vocabulary mismatch: expected hash {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("artifact {path} was produced by config {found}, current config is {expected}")]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },

    #[error("empty {0}")]
    Empty(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Dataset { .. } | Error::Format(_) => ErrorKind::Data,
            Error::Config(_) | Error::ConfigMismatch { .. } => ErrorKind::Config,
            Error::VocabMismatch { .. } => ErrorKind::Model,
            Error::Invalid(_)
            | Error::LengthMismatch { .. }
            | Error::TooLong { .. }
            | Error::Empty(_) => ErrorKind::Invalid,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
