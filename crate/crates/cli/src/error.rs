use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA_FORMAT: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },

    #[error("{0}")]
    DataFormat(String),

    #[error(transparent)]
    Core(#[from] ocp_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use ocp_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => exit::USAGE,
            CliError::DataFormat(_) => exit::DATA_FORMAT,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) => match e {
                E::Config(_) => exit::USAGE,
                E::Format { .. } | E::IndexOutOfRange { .. } | E::Shape { .. } => exit::DATA_FORMAT,
                E::Io { .. } => exit::IO,
                E::Linalg(_) | E::Domain(_) | E::NonFiniteLoss { .. } => exit::NUMERIC,
                E::Training { source, .. } => match **source {
                    E::Config(_) => exit::USAGE,
                    _ => exit::NUMERIC,
                },
            },
        }
    }
}
