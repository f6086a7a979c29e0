use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed png {path}: {reason}")]
    MalformedPng { path: PathBuf, reason: String },

    #[error("unsupported png color type {color_type} at bit depth {bit_depth} in {path}")]
    UnsupportedColorType {
        path: PathBuf,
        color_type: String,
        bit_depth: u8,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty caption")]
    EmptyCaption,

    #[error("malformed weight snapshot: {0}")]
    MalformedSnapshot(String),

    #[error("malformed font file: {0}")]
    MalformedFont(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch { expected, actual }
    }
}
