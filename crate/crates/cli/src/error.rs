use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] kernelnet::Error),
    #[error("property suite failed: {0}")]
    PropertyFailure(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration and I/O problems, 3 for numerical failures, 4 for
    /// a failed property suite.
    pub fn exit_code(&self) -> u8 {
        use kernelnet::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::PropertyFailure(_) => 4,
            CliError::Core(
                E::NonFiniteLoss { .. }
                | E::QuadratureFailure(_)
                | E::NonFiniteInput(_)
                | E::DegenerateVector { .. },
            ) => 3,
            CliError::Core(_) => 2,
        }
    }
}
