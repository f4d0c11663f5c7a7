use thiserror::Error;

/// Exit code for a configuration that fails validation.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit code for a numerical failure during a run.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing files in {dir}:\n  - {}", .files.join("\n  - "))]
    MissingFiles { dir: String, files: Vec<String> },

    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::MissingFiles { .. } | CliError::Io(_) => 1,
        }
    }
}

impl From<trapwave::Error> for CliError {
    fn from(e: trapwave::Error) -> Self {
        use trapwave::Error as E;
        match e {
            E::Config(_) | E::Domain(_) | E::EmptyCondensate { .. } | E::EmptyEnsemble => CliError::Validation(vec![e.to_string()]),
            E::Diverged { .. } | E::NotConverged { .. } | E::RayIntegration { .. } | E::MemberDiverged { .. } => {
                CliError::Numerical(e.to_string())
            }
            E::Io(_) | E::Format(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
