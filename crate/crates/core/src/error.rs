use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum LactError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("storage error at {path}: {message}")]
    Storage { path: PathBuf, message: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, LactError>;

impl LactError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LactError::InvalidArgument(msg.into())
    }

    pub fn storage(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        LactError::Storage {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        LactError::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            LactError::InvalidArgument(_) | LactError::Config(_) => 2,
            LactError::NumericalFailure { .. } => 3,
            LactError::Storage { .. } | LactError::Format { .. } => 4,
        }
    }
}
