use bento_core::BentoError;

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx.
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint failure: {0}")]
    Permanent(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("task {0} has no test questions")]
    EmptyTestSet(String),
    #[error("task {0} has an empty exemplar pool")]
    EmptyPool(String),
    #[error("could not parse any task from ranking response: {raw:?}")]
    UnparseableRanking { raw: String },
    #[error("bad task data in {path}: {message}")]
    Data { path: String, message: String },
    #[error(transparent)]
    Core(#[from] BentoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CollectorError {
    pub fn is_transient(&self) -> bool {
        matches!(self, CollectorError::Transient(_))
    }
}

pub type Result<T> = std::result::Result<T, CollectorError>;
