use std::path::PathBuf;
use std::process::ExitCode;

use styletrf::Error;

#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {detail}")]
    Config { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Core(Error::Contract(_)) => 2,
            CliError::Core(Error::Numerical { .. } | Error::OutsideBounds { .. }) => 4,
            CliError::Core(_) => 3,
        })
    }
}
