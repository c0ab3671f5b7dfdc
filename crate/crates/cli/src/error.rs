use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] voxcycle::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use voxcycle::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 1,
            CliError::Core(E::Config { .. }) => 1,
            CliError::Core(E::NonFinite { .. }) => 3,
            CliError::Core(E::Tensor(voxcore::VoxError::NonFinite { .. })) => 3,
            CliError::Core(_) | CliError::Io { .. } | CliError::Data(_) => 2,
        }
    }
}
