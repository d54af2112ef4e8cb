use thiserror::Error;

/// Problems found while validating a dataset or a model against a dataset.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("dataset is empty")]
    Empty,
    #[error("row {row}: survival time must be strictly positive and finite, got {value}")]
    NonPositiveTime { row: usize, value: f64 },
    #[error("row {row}: status must be 0 or 1, got {value}")]
    InvalidStatus { row: usize, value: String },
    #[error("row {row}, column `{column}`: value is missing or not finite")]
    MissingValue { row: usize, column: String },
    #[error("column `{0}` not found in the header")]
    MissingColumn(String),
    #[error("column `{column}` is not numeric (row {row}: `{value}`)")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("time-scale column `{0}` is not one of the hazard-scale columns")]
    TimeColumnNotInHazard(String),
    #[error("cluster `{0}` has no subjects")]
    EmptyCluster(String),
    #[error(
        "{design} design restricted to uncensored rows has rank {rank} < {columns} columns"
    )]
    RankDeficient {
        design: &'static str,
        rank: usize,
        columns: usize,
    },
    #[error("row {row} has {found} covariates, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("{0}")]
    Model(String),
}

#[derive(Debug, Error)]
pub enum MeghError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("validation failed: {0}")]
    Validation(#[from] ValidationError),
    #[error("numerical failure in cluster {cluster}: {message} (parameters {params:?})")]
    Numeric {
        cluster: usize,
        message: String,
        params: Vec<f64>,
    },
    #[error("{0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MeghError> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> MeghError {
    MeghError::Domain(msg.into())
}

pub(crate) fn check_len(what: &'static str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(MeghError::Dimension {
            what,
            found,
            expected,
        });
    }
    Ok(())
}
