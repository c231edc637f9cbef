use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error categories map onto distinct CLI exit codes through [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("overlapping splits: record {record} appears in `{first}` and `{second}`")]
    OverlappingSplits {
        record: u64,
        first: String,
        second: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("content hash mismatch for {path}: expected {expected}, found {found}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("class leakage: {0}")]
    Leakage(String),

    #[error("empty triplet set")]
    EmptyTriplets,
}

/// Coarse failure class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Image(_)
            | Error::Geometry(_)
            | Error::OverlappingSplits { .. }
            | Error::Data(_)
            | Error::Precondition(_)
            | Error::HashMismatch { .. }
            | Error::Leakage(_) => ErrorClass::Data,
            Error::Tensor(_) | Error::EmptyTriplets => ErrorClass::Runtime,
        }
    }
}
