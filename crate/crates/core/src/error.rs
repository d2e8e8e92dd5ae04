use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("load error at row {row}, column {column}: {message}")]
    Load {
        row: usize,
        column: String,
        message: String,
    },

    #[error("no data rows in {0}")]
    NoDataRows(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("dataset is already standardized")]
    AlreadyStandardized,

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate clustering: {0}")]
    DegenerateClusters(String),

    #[error("SGD diverged (loss {loss:.4e} > 10x initial {initial:.4e}); try a smaller learning rate")]
    Diverged { loss: f64, initial: f64 },

    #[error("record {index} is not flagged as an anomaly")]
    NotFlagged { index: usize },

    #[error("record does not land in an anomalous leaf")]
    NotAnomalousLeaf,

    #[error("both classes must be present to compute AUROC")]
    SingleClass,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid config {source_name}:\n  {}", .problems.join("\n  "))]
    Config { source_name: String, problems: Vec<String> },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
