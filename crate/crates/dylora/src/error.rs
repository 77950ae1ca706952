use std::path::PathBuf;

/// Front-end errors. Each maps onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("hard assertion failed: {0}")]
    Assertion(String),
    #[error("training diverged: non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Core(dylora_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dylora_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Usage(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Divergence { .. } | CliError::Core(E::Divergence { .. }) => 5,
            CliError::Io { .. } => 1,
            CliError::Core(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<dylora_core::Error> for CliError {
    fn from(e: dylora_core::Error) -> Self {
        match e {
            dylora_core::Error::Divergence { step } => CliError::Divergence { step },
            other => CliError::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
