use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bsenergy::Error),

    #[error("{0}")]
    Usage(String),

    /// A self-check ran to completion and reported failure.
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    /// 1 failed check, 2 usage or validation, 3 data, 4 numerical abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(bsenergy::Error::Config(_)) => 2,
            CliError::Core(_) => 3,
            CliError::Usage(_) => 2,
            CliError::CheckFailed(_) => 1,
        }
    }
}
