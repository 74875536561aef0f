use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?} (expected \"DGST\")")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported DGST version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown tensor kind {0}")]
    UnknownKind(u32),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("trailing data: expected {expected} bytes, found {actual}")]
    TrailingData { expected: usize, actual: usize },

    #[error("tensor kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("distance transform undefined: no boundary pixels")]
    EmptyBoundary,

    #[error("no seed regions were accepted")]
    EmptySeeds,

    #[error("need at least two classes: {0}")]
    SingleClass(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("image codec: {0}")]
    Image(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn dims(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
