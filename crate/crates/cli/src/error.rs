use std::path::Path;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input. Exit code 1.
    #[error("{0}")]
    Input(String),
    /// The computation itself failed. Exit code 2.
    #[error("{0}")]
    Numerical(String),
    /// An evaluation ran but did not meet its threshold. Exit code 1.
    #[error("{0}")]
    Failed(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Failed(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<merlin_core::Error> for CliError {
    fn from(e: merlin_core::Error) -> Self {
        use merlin_core::Error as E;
        match e {
            E::InvalidInput(_) | E::InvalidParameter(_) | E::InvalidBand(_) | E::SpecRejected(_) => {
                CliError::Input(e.to_string())
            }
            E::DegenerateConditioning(_)
            | E::NumericalFailure(_)
            | E::RetractionSingularity
            | E::SolveFailure(_) => CliError::Numerical(e.to_string()),
        }
    }
}
