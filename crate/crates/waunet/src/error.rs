//! Application-level errors with exit-code mapping for the CLI.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum AppError {
    /// IO failure with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed file contents; names the offending file.
    Format { path: PathBuf, reason: String },
    /// Engine error bubbled up from waunet-core.
    Core(waunet_core::Error),
    /// Invalid invocation or configuration; exits with code 2.
    Usage(String),
    /// Anything else that fails at runtime; exits with code 1.
    Runtime(String),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            AppError::Format { path, reason } => {
                write!(f, "{}: format error: {reason}", path.display())
            }
            AppError::Core(e) => write!(f, "{e}"),
            AppError::Usage(m) => write!(f, "{m}"),
            AppError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<waunet_core::Error> for AppError {
    fn from(e: waunet_core::Error) -> Self {
        match e {
            waunet_core::Error::Config(m) | waunet_core::Error::Usage(m) => AppError::Usage(m),
            other => AppError::Core(other),
        }
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

    /// CLI exit code: 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
