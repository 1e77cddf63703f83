use thiserror::Error;

/// Errors produced by the estimation, filtering and learning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The observation at `step` has zero probability under the model.
    #[error("degenerate likelihood: observation at step {step} has zero probability under the model")]
    DegenerateLikelihood { step: usize },

    /// Bayes filter produced zero total mass. `unnormalized` is the vector
    /// before normalization so the caller can decide on a fallback.
    #[error("degenerate belief at step {step}: observation impossible under the model")]
    DegenerateBelief { step: usize, unnormalized: Vec<f64> },

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
