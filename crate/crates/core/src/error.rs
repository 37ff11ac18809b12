use thiserror::Error;

#[derive(Debug, Error)]
pub enum BentoError {
    #[error("invalid task id: {0}")]
    InvalidTaskId(String),

    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),

    #[error("unknown task id `{0}`")]
    UnknownTask(String),

    #[error("need at least {min} tasks, got {got}")]
    TooFewTasks { min: usize, got: usize },

    #[error("missing transfer records for {} (source, target) pair(s): {}", .0.len(), format_pairs(.0))]
    MissingPairs(Vec<(String, String)>),

    #[error("non-finite score in record {source_task} -> {target} (seed {seed}, question {question_id}): {score}")]
    NonFiniteScore {
        source_task: String,
        target: String,
        seed: u64,
        question_id: String,
        score: f64,
    },

    #[error("duplicate transfer record {source_task} -> {target} (seed {seed}, question {question_id})")]
    DuplicateRecord {
        source_task: String,
        target: String,
        seed: u64,
        question_id: String,
    },

    #[error("matrix is already {0}; normalization expects a raw matrix")]
    AlreadyNormalized(&'static str),

    #[error("matrix must be normalized (centered or zscored) before computing distances")]
    NotNormalized,

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("all pairwise distances are zero; set an absolute kernel constant instead of a relative one")]
    ZeroDistances,

    #[error("kernel scale t must be > 1, got {0}")]
    InvalidKernelScale(f64),

    #[error("row for task `{0}` has zero norm")]
    ZeroNormRow(String),

    #[error("similarity entry ({row}, {col}) is negative ({value}); shift the matrix first")]
    NegativeSimilarity { row: usize, col: usize, value: f64 },

    #[error("task `{0}` has zero degree")]
    ZeroDegree(String),

    #[error("eigendecomposition failed, residual norm {residual:e}")]
    Eigensolver { residual: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("brute-force enumeration limited to {max} tasks, got {got}")]
    TooLargeForBruteForce { max: usize, got: usize },

    #[error("corpus for task `{0}` is empty after tokenization")]
    EmptyCorpus(String),

    #[error("missing per-task example counts, required for micro averaging")]
    MissingExampleCounts,

    #[error("NRMSE denominator is not positive ({0})")]
    NonPositiveDenominator(f64),

    #[error("task `{0}` has no examples")]
    EmptyTask(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    const SHOWN: usize = 10;
    let mut s = pairs
        .iter()
        .take(SHOWN)
        .map(|(a, b)| format!("({a}, {b})"))
        .collect::<Vec<_>>()
        .join(", ");
    if pairs.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", pairs.len() - SHOWN));
    }
    s
}

pub type Result<T> = std::result::Result<T, BentoError>;
