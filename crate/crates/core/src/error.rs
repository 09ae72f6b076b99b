use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("weight matrix support does not match digraph: {0} mismatched entries")]
    SupportMismatch(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inequality component {0} has no gradient and the subgradient fallback is disabled")]
    NonsmoothUnsupported(usize),
    #[error("inner solver failed at round {round}, agent {agent}: {reason}")]
    InnerSolve {
        round: usize,
        agent: usize,
        reason: String,
    },
    #[error("inner solve did not reach tolerance within {0} iterations")]
    MaxIterations(usize),
    #[error("centralized solver did not converge: {0}")]
    NonConvergence(String),
    #[error("problem appears infeasible: {0}")]
    Infeasible(String),
    #[error("singular KKT system")]
    Singular,
    #[error("invariant violated at round {round}: {what}")]
    InvariantViolation { round: usize, what: String },
    #[error("measured dual gap {0:e} is negative beyond the inner-solve noise floor")]
    NegativeDualGap(f64),
    #[error("metric is not positive over the fitting window: {0}")]
    NonPositiveMetric(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
