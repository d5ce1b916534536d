use radiomap_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    /// One or more verifier checks failed; the report has been written.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Core(#[from] Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    /// 2 for argument and configuration problems, 3 for numeric or training
    /// failures, 4 for IO and unreadable files.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Core(e) => match e {
                Error::Argument(_) | Error::Config(_) => 2,
                Error::Generation(_)
                | Error::Numeric(_)
                | Error::DegenerateShift { .. }
                | Error::UndefinedMetric(_)
                | Error::Training(_) => 3,
                Error::Format(_) | Error::Io(_) => 4,
            },
        }
    }
}
