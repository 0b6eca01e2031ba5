//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("batch-norm in train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("class direction {0} has zero norm")]
    DegenerateDirection(usize),

    #[error("backward called without a cached train-mode forward pass")]
    StaleCache,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("every centroid is empty; cannot assign pseudo-labels")]
    AllCentroidsEmpty,

    #[error("mixup needs at least 2 samples, got {0}")]
    DegenerateMixup(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dataset has no labels")]
    Unlabeled,

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
