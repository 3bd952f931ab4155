use dai_core::Error as CoreError;
use thiserror::Error;

/// Failures surfaced to the command line, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Input { context: String, source: CoreError },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Failed(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn input(context: impl Into<String>, source: CoreError) -> Self {
        CliError::Input {
            context: context.into(),
            source,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn csv(path: impl AsRef<std::path::Path>, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 for domain failures, 2 for bad invocations or unreadable inputs.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input { .. } | CliError::Io { .. } | CliError::Csv { .. } => 2,
            CliError::Core(e) if is_input_error(e) => 2,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}

fn is_input_error(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Parse { .. }
            | CoreError::Io(_)
            | CoreError::InvalidNetwork(_)
            | CoreError::NegativeSusceptance { .. }
            | CoreError::Asymmetric { .. }
            | CoreError::Disconnected(_)
            | CoreError::NonPositive { .. }
            | CoreError::Dimension { .. }
            | CoreError::InvalidCost(_)
            | CoreError::InvalidController(_)
            | CoreError::InvalidScenario(_)
    )
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
