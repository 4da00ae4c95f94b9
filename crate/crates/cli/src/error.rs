use std::path::{Path, PathBuf};

/// Exit status 2 for usage and I/O problems, 1 for failures inside the
/// computation itself.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Compute(_) => 1,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn compute(err: impl std::fmt::Display) -> Self {
        CliError::Compute(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
