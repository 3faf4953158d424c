use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("initialization failed after {retries} retries: {reason}")]
    InitializationFailure { retries: usize, reason: String },

    #[error("sampler failure: {0}")]
    SamplerFailure(String),

    #[error("degenerate bridge at SMC stage {stage}: all incremental weights are zero")]
    DegenerateBridge { stage: usize },

    #[error("training failed at iteration {iteration}: {reason}")]
    TrainingFailure { iteration: usize, reason: String },

    #[error("task unsuitable: {failures} of {attempts} simulations were invalid")]
    TaskUnsuitable { failures: usize, attempts: usize },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
