use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("target column not found: {0}")]
    TargetNotFound(String),

    #[error("non-numeric value {value:?} in column {column:?} at row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation {op} is not valid for feature {feature}")]
    MaskViolation { op: &'static str, feature: String },

    #[error("cannot parse feature expression {0:?}")]
    Parse(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::TargetNotFound(_) => "target_not_found",
            Error::NonNumeric { .. } => "non_numeric",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::Config(_) => "config",
            Error::Split(_) => "split",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::MaskViolation { .. } => "mask_violation",
            Error::Parse(_) => "parse",
            Error::Evaluation(_) => "evaluation",
            Error::NonFinite(_) => "non_finite",
        }
    }
}
