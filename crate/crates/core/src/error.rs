use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("scan {index} is out of timestamp order")]
    OutOfOrder { index: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: header declares {declared} records but {found} were read")]
    CountMismatch {
        path: PathBuf,
        declared: usize,
        found: usize,
    },

    #[error("{path}:{line}: duplicate key {key}")]
    DuplicateKey {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("{path}:{line}: non-finite number {token:?}")]
    NonFiniteNumber {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
