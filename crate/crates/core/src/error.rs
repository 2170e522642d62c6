use chrono::NaiveDate;
use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column '{0}' not found in header")]
    MissingColumn(String),

    #[error("row {row}: required value '{column}' is missing")]
    MissingValue { row: usize, column: String },

    #[error("date gap between {before} and {after}: {missing} is missing")]
    DateGap {
        before: NaiveDate,
        after: NaiveDate,
        missing: NaiveDate,
    },

    #[error("dates out of order or duplicated at {0}")]
    DateOrder(NaiveDate),

    #[error("series is empty")]
    EmptySeries,

    #[error("season window selects no days")]
    EmptySeason,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate spline knots: {0}")]
    DegenerateKnots(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("design has {rows} usable rows for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },

    #[error("unknown coefficient '{0}'")]
    UnknownCoefficient(String),

    #[error("model fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
