use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invariant abort: {0}")]
    Invariant(String),
    #[error("{0} of {1} checks failed")]
    ChecksFailed(usize, usize),
    #[error(transparent)]
    Core(#[from] dcopt::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 0 success, 1 config error, 2 solver failure, 3 invariant abort.
    pub fn exit_code(&self) -> u8 {
        use dcopt::Error as E;
        match self {
            CliError::Config { .. } | CliError::ChecksFailed(..) => 1,
            CliError::Solver(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Parse { .. } | E::InvalidArgument(_) | E::DimensionMismatch { .. } => 1,
                E::InvariantViolation { .. } => 3,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
