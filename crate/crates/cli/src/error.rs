use std::process::ExitCode;

use mtd_core::MtdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }
}

impl From<MtdError> for CliError {
    fn from(e: MtdError) -> Self {
        let msg = e.to_string();
        match e {
            MtdError::InvalidArgument(_) | MtdError::SpecMismatch(_) => CliError::Config(msg),
            MtdError::Singular(_) | MtdError::NonFinite(_) => CliError::Numerical(msg),
            MtdError::Format(_) | MtdError::Io(_) | MtdError::Json(_) | MtdError::Csv(_) => {
                CliError::Io(msg)
            }
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
