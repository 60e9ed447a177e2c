use std::path::PathBuf;

use cdainv_core::eval::EvalError;
use cdainv_core::sim::SimError;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{file}:{line}: {message}")]
    Schema { file: String, line: u64, message: String },
    #[error("{file}:{line}: {message}")]
    Integrity { file: String, line: u64, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A stage ran before the stage that produces its inputs.
    #[error("{0}")]
    MissingArtifact(String),
    #[error("{0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
