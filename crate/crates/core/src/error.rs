use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("design matrix is rank deficient at column `{column}`")]
    RankDeficient { column: String },

    #[error("infeasible matching: {rows} rows but only {cols} columns")]
    Infeasible { rows: usize, cols: usize },

    #[error("weighted risk set is empty at event time {time}")]
    ZeroRiskSet { time: f64 },

    #[error("truncation time {tau} exceeds the largest follow-up time {max_time} in the {arm} arm")]
    TruncationBeyondFollowUp { arm: &'static str, tau: f64, max_time: f64 },

    #[error("{0} arm is empty")]
    EmptyArm(&'static str),

    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("replication failures exceeded tolerance: {failed} of {total} ({detail})")]
    TooManyFailures { failed: usize, total: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
