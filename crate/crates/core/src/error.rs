use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: column {column} value {value} outside 1..={cardinality}")]
    Domain {
        column: usize,
        value: u32,
        cardinality: u32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("privacy budget exceeded: spent ({spent_epsilon}, {spent_delta}) > allowed ({epsilon}, {delta})")]
    BudgetExceeded {
        spent_epsilon: f64,
        spent_delta: f64,
        epsilon: f64,
        delta: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("query generation failed: {0}")]
    QueryGeneration(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Row { .. } => "row",
            Error::Dataset(_) => "dataset",
            Error::Data(_) => "data",
            Error::Domain { .. } => "domain",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::Degenerate(_) => "degenerate",
            Error::QueryGeneration(_) => "query_generation",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
