use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: non-positive price {price} for {ticker} on {date}")]
    NonPositivePrice {
        line: u64,
        date: NaiveDate,
        ticker: String,
        price: f64,
    },

    #[error("duplicate cell ({date}, {ticker})")]
    DuplicateCell { date: NaiveDate, ticker: String },

    #[error("missing cell ({date}, {ticker})")]
    MissingCell { date: NaiveDate, ticker: String },

    #[error("duplicate ticker {0}")]
    DuplicateTicker(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty slice for {0} range")]
    EmptySlice(&'static str),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("portfolio size {size} exceeds universe of {universe}")]
    PortfolioTooLarge { size: usize, universe: usize },

    #[error("invalid action value {0}")]
    InvalidAction(u8),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("empty batch")]
    EmptyBatch,

    #[error("ticker sets differ between matrices")]
    TickerMismatch,

    #[error("incomplete report grid: {0}")]
    IncompleteGrid(String),

    #[error("non-finite return at row {row}, asset {asset}")]
    NonFiniteReturn { row: usize, asset: usize },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
