use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes. Argument errors caught by the parser itself also
/// exit with [`EXIT_USAGE`].
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: rkbilinear::Error,
    },

    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use rkbilinear::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core { source, .. } => match source {
                E::Io(_) => EXIT_IO,
                E::Diverged { .. }
                | E::TrainingDiverged { .. }
                | E::NonFinite(_)
                | E::StepUnderflow { .. }
                | E::SubstepBudget { .. } => EXIT_DIVERGED,
                _ => EXIT_FAILURE,
            },
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

/// Attaches a context line to library errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T>;
}

impl<T> Context<T> for rkbilinear::Result<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}

pub fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
