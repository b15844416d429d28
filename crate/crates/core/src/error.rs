//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("column {0:?} not found in CSV header")]
    MissingColumn(String),

    #[error("malformed CSV at line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("numeric column {0:?} has no observed training value; mean is undefined")]
    NoObservedNumeric(String),

    #[error("dataset with {0} rows is too small to split 81/9/10 (need at least 10)")]
    SplitTooSmall(usize),

    #[error("category index {index} out of range for column {column:?} ({size} categories)")]
    CategoryOutOfRange {
        column: String,
        index: usize,
        size: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown method {0:?} (expected mode, knn, decoder, ttita or ttita-mtl)")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
