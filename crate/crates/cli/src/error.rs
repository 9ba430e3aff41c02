use std::io;
use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),

    #[error("verification failed: {0}")]
    Verify(String),

    #[error(transparent)]
    Core(#[from] link_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 verification failure, 2 usage/config, 3 I/O/format.
    pub fn exit_code(&self) -> i32 {
        use link_core::Error as E;
        match self {
            CliError::Verify(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Csv(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Usage(_) | E::Dimension { .. } => 2,
                E::Bounds { .. } | E::DuplicateCoord(_) | E::NonFinite(_) => 3,
                E::Divergence { .. } => 1,
            },
        }
    }
}
