use thiserror::Error;

/// Errors produced by estimation, asymptotics and the experiment harness.
#[derive(Debug, Error)]
pub enum LqError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("solver did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("singular matrix in sandwich variance at q = {q}")]
    SingularMatrix { q: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{dropped} of {total} replicates failed, exceeding the failure budget")]
    FailureBudget { dropped: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LqError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LqError::Domain(msg.into())
    }
}

pub type Result<T, E = LqError> = std::result::Result<T, E>;
