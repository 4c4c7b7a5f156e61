use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] kbnet_core::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("kernel basis mismatch: checkpoint was trained with {expected}, got {found}")]
    PcaMismatch { expected: String, found: String },

    #[error("non-finite loss at step {step} (batch seed {batch_seed})")]
    NonFinite { step: u64, batch_seed: u64 },
}

impl ModelError {
    pub fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        ModelError::Checkpoint {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        match self {
            ModelError::Core(e) => e.is_validation(),
            ModelError::Config(_) | ModelError::Shape(_) | ModelError::PcaMismatch { .. } => true,
            _ => false,
        }
    }
}
