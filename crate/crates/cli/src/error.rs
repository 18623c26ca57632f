use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Solver(#[from] robust_contract::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use robust_contract::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::MissingArtifact(_) => 3,
            Self::Verification(_) => 4,
            // These stem from configured values rather than from the run.
            Self::Solver(E::InvalidInput(_) | E::InvalidModel(_) | E::InvalidGrid(_) | E::InfeasibleParticipation { .. }) => 2,
            Self::Solver(_) | Self::Io(_) => 1,
        }
    }
}
