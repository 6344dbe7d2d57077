use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series is empty or too short: {0}")]
    TooShort(String),
    #[error("no complete Saturday-ending week in {0}")]
    NoCompleteWeek(String),
    #[error("date {date} is not a Saturday ({context})")]
    NotSaturday { date: NaiveDate, context: String },
    #[error("frequency mismatch: {0}")]
    FrequencyMismatch(String),
    #[error("date ranges do not overlap")]
    EmptyIntersection,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{file}:{line}: column `{column}`: {message}")]
    Schema { file: String, line: u64, column: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("read of {what} at {date} is past as-of date {as_of}")]
    Leakage { what: String, date: NaiveDate, as_of: NaiveDate },
    #[error("missing data: {0}")]
    Missing(String),
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("matrix is singular after maximum jitter")]
    Singular,
    #[error("no eligible candidates: {0}")]
    NoCandidates(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
