use std::path::PathBuf;

use kbnet_model::ModelError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or inputs; nothing was computed.
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Runtime(String),

    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Core(#[from] kbnet_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        kbnet_core::Error::io(path, e).into()
    }

    /// 1 for validation errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        let validation = match self {
            CliError::Validation(_) | CliError::Missing { .. } => true,
            CliError::Runtime(_) => false,
            CliError::Model(e) => e.is_validation(),
            CliError::Core(e) => e.is_validation(),
        };
        if validation {
            1
        } else {
            2
        }
    }
}
