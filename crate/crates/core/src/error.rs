use thiserror::Error;

/// Errors produced anywhere in the overlap estimation stack.
#[derive(Debug, Error)]
pub enum OetrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("degenerate pose: translation has zero norm")]
    DegeneratePose,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("sample generation failed: {0}")]
    Generation(String),
    #[error("non-finite value at step {step} in {term} (sample {sample})")]
    NonFinite {
        step: usize,
        term: String,
        sample: usize,
    },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("checkpoint load failed: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OetrError {
    /// True for failures caused by numerics rather than bad data or usage.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            OetrError::NumericalDegeneracy(_) | OetrError::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, OetrError>;

pub(crate) fn invalid_shape(msg: impl Into<String>) -> OetrError {
    OetrError::InvalidShape(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> OetrError {
    OetrError::InvalidInput(msg.into())
}
