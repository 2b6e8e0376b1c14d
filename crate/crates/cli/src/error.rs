use std::path::PathBuf;

/// Failures of a command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incomplete data: {0}")]
    RaggedData(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("chain diverged: {0}")]
    ChainDiverged(String),

    #[error(transparent)]
    Model(#[from] sphcov::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Self::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 for a failed validation, 3 for bad input, 4 for a chain that
    /// diverged or hit a numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Io { .. } | Self::Parse { .. } | Self::InvalidConfig(_) | Self::RaggedData(_) => {
                3
            }
            Self::ChainDiverged(_) => 4,
            Self::Model(e) => match e {
                sphcov::Error::InvalidParameter(_)
                | sphcov::Error::DimensionMismatch { .. }
                | sphcov::Error::TooFewSamples { .. } => 3,
                _ => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
