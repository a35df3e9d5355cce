use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and its kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown client id {0}")]
    UnknownClient(usize),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("non-finite parameters after {0}")]
    NonFinite(&'static str),

    #[error("malformed IDX file {path}: {reason}")]
    IdxFormat { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
