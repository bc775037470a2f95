use std::path::PathBuf;

use fastdiff_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(CoreError),
}

impl HarnessError {
    /// Process exit code: 2 for configuration and IO problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } => 2,
            HarnessError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(msg) => HarnessError::Config(msg),
            other => HarnessError::Numerical(other),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
