use std::path::Path;

use tmrfi_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.display().to_string(), source }
    }

    /// 2 for bad input, 3 for an infeasible calibration, 4 for everything
    /// that points at a bug or the environment.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Core(CoreError::CalibrationInfeasible(_)) => 3,
            AppError::Core(CoreError::Internal(_)) => 4,
            AppError::Core(_) => 2,
            AppError::Io { .. } | AppError::Csv(_) | AppError::Json(_) | AppError::Pool(_) => 4,
        }
    }
}
