use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative time {0}s")]
    NegativeTime(i64),
    #[error("non-finite point ({0}, {1})")]
    NonFinitePoint(f64, f64),
    #[error("count {count} is below the publication threshold {threshold}")]
    BelowThreshold { count: u32, threshold: u32 },
    #[error("invalid cluster policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("location history out of order at sample {index}")]
    HistoryOrder { index: usize },
    #[error("inverted bucket range [{lo}, {hi}]")]
    InvertedRange { lo: u64, hi: u64 },
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("pipeline stage `{stage}` failed: {reason}")]
    Pipeline { stage: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
