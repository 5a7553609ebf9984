use std::path::PathBuf;

/// Everything the harness can fail with. Validation problems exit with 1,
/// property-suite failures with 2.
#[derive(Debug, thiserror::Error)]
pub enum PcisError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: u64, message: String },
    #[error(transparent)]
    Core(#[from] pcis_core::Error),
    #[error("property suite failed: {0}")]
    Property(String),
}

impl PcisError {
    pub fn exit_code(&self) -> u8 {
        match self {
            PcisError::Property(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PcisError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        PcisError::Format { path: path.into(), line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, PcisError>;

pub(crate) fn config_err(msg: impl Into<String>) -> PcisError {
    PcisError::Config(msg.into())
}
