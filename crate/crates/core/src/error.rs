//! Library-wide error type. Shape/usage violations inside the tensor engine
//! panic (they are bugs); everything reachable from bad files, bad configs,
//! or degenerate data comes back through [`Error`].

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad idx file {path}: {reason}")]
    IdxFormat { path: PathBuf, reason: String },

    #[error("dataset inconsistency: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty eligible set: {0}")]
    EmptyEligibleSet(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn idx(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::IdxFormat { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
