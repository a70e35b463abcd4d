use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid run point: {0}")]
    InvalidPoint(String),

    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),

    #[error("insufficient data: need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("parameters are not identifiable: {0}")]
    Unidentifiable(String),

    #[error("no start converged ({starts} starts tried)")]
    NoConvergedStart { starts: usize },

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("bootstrap failed: {failed} of {total} resamples could not be fitted")]
    BootstrapFailed { failed: usize, total: usize },

    #[error("insufficient positive residuals: {0}")]
    InsufficientResiduals(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("row {row}: parse error: {msg}")]
    Parse { row: usize, msg: String },

    #[error("row {row}: invariant violation: {msg}")]
    InvariantViolation { row: usize, msg: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
