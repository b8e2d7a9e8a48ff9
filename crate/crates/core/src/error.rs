use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bisection failed to bracket target angle {target} (forward range [{lo}, {hi}])")]
    ConvergenceFailure { target: f64, lo: f64, hi: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("state mismatch: {0}")]
    StateMismatch(String),

    #[error("unknown dataset kind `{0}`")]
    UnknownKind(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at iteration {iteration} (batch {batch_index})")]
    NonFiniteLoss { iteration: usize, batch_index: usize },

    #[error("format version mismatch: file has version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },

    #[error("corrupt record: {0}")]
    CorruptRecord(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
