use std::path::Path;

use vecchia_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 for bad configuration or inputs, 3 for numerical failures, 4 for
    /// filesystem failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) if e.is_io() => 4,
            CliError::Core(e) => match e {
                CoreError::InvalidParameter(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::DegeneratePair(..)
                | CoreError::PartitionCapacity { .. }
                | CoreError::EmptyPlan(_)
                | CoreError::Unsupported(_) => 2,
                _ => 3,
            },
        }
    }
}
