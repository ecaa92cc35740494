use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failures of a command, each mapped to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(kamal_core::Error),
}

impl CliError {
    pub fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 config, 3 I/O (including unreadable artifacts), 4 non-finite
    /// numerics, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use kamal_core::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(e) => match e {
                E::NonFinite { .. } => 4,
                E::Io(_) | E::BadMagic { .. } | E::Truncated { .. } | E::Format { .. } | E::CountMismatch { .. } => 3,
                E::InvalidSpec { .. } | E::InvalidArgument { .. } => 2,
                _ => 1,
            },
        }
    }
}

impl From<kamal_core::Error> for CliError {
    fn from(e: kamal_core::Error) -> Self {
        match e {
            kamal_core::Error::NonFinite { what } => CliError::Numeric(format!("non-finite value in {what}")),
            other => CliError::Core(other),
        }
    }
}
