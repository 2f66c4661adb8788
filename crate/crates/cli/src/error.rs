use std::path::PathBuf;

use maxstab::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("conflicting flags: {0}")]
    Conflict(String),

    #[error("missing input: {0}")]
    Missing(PathBuf),

    #[error("data error: {0}")]
    Data(String),

    #[error("digest mismatch for {path}: manifest {expected}, found {found}")]
    Digest { path: String, expected: String, found: String },

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] maxstab::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Digest { .. } => 5,
            CliError::Missing(_) => 6,
            CliError::Conflict(_) => 7,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
