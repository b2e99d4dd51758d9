use std::path::{Path, PathBuf};

use asabeam_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("model/input mismatch: {0}")]
    Mismatch(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(CoreError),
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, err: impl std::fmt::Display) -> Self {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    /// Prefixes the message with where the error happened, keeping its kind.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            AppError::Config(m) => AppError::Config(format!("{}: {}", what, m)),
            AppError::Io { path, message } => AppError::Io {
                path,
                message: format!("{}: {}", what, message),
            },
            AppError::Format { path, message } => AppError::Format {
                path,
                message: format!("{}: {}", what, message),
            },
            AppError::Mismatch(m) => AppError::Mismatch(format!("{}: {}", what, m)),
            AppError::Numeric(m) => AppError::Numeric(format!("{}: {}", what, m)),
            AppError::Core(e) => {
                let code = AppError::Core(e.clone()).exit_code();
                let m = format!("{}: {}", what, e);
                match code {
                    2 => AppError::Config(m),
                    4 => AppError::Mismatch(m),
                    _ => AppError::Numeric(m),
                }
            }
        }
    }

    /// Process exit code: 2 config, 3 I/O or file format, 4 model/input
    /// mismatch, 5 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Io { .. } | AppError::Format { .. } => 3,
            AppError::Mismatch(_) => 4,
            AppError::Numeric(_) => 5,
            AppError::Core(e) => match e.root() {
                CoreError::Config(_) | CoreError::Input(_) => 2,
                CoreError::Dimension(_) | CoreError::Dtype(_) | CoreError::Contract(_) => 4,
                CoreError::Numeric(_) | CoreError::Singular { .. } | CoreError::SingularAt { .. } => 5,
                CoreError::Stage { .. } => unreachable!("root strips stages"),
            },
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        AppError::Core(e)
    }
}
