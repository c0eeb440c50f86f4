use std::path::PathBuf;

use taskmod_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type AppResult<T> = Result<T, AppError>;

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_)
        | CoreError::Layer { .. }
        | CoreError::DegenerateTask { .. }
        | CoreError::Unsupported(_) => 2,
        CoreError::Divergence { .. } | CoreError::NonFinite { .. } => 3,
        CoreError::Variant { source, .. } => core_exit_code(source),
        _ => 1,
    }
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        AppError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Format { .. } => 2,
            AppError::Core(e) => core_exit_code(e),
            AppError::Io { .. } | AppError::Csv(_) => 1,
        }
    }
}
