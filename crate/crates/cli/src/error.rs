use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration has no `{0}` block")]
    MissingBlock(&'static str),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] solvdiff_core::Error),

    #[error("verification failed for criteria {0:?}")]
    VerifyFailed(Vec<u8>),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
