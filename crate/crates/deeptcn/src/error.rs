use thiserror::Error;

/// Errors surfaced by the IO layer and the CLI.
///
/// Exit-code contract: 0 success, 1 usage/config error, 2 data error,
/// 3 numeric failure.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Core(#[from] deeptcn_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl AppError {
    /// Stable exit codes for scripting.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Io(_) | AppError::Csv(_) | AppError::Json(_) | AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
            AppError::Core(e) => match e {
                deeptcn_core::Error::Config(_) => 1,
                deeptcn_core::Error::NonFinite { .. } | deeptcn_core::Error::Domain { .. } => 3,
                deeptcn_core::Error::Undefined(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
