use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("truncation mismatch: {0}")]
    Mismatch(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("inadmissible frequency: {0}")]
    Inadmissible(String),
    #[error("near-singular block at {0}")]
    NearSingular(String),
    #[error("contraction failure: {0} (try a smaller lambda)")]
    Contraction(String),
    #[error("excluded pattern: {0}")]
    ExcludedPattern(String),
    #[error("divisor below threshold: {0}")]
    SmallDivisor(String),
    #[error("analyticity ball overflow: norm {0} exceeds {1}")]
    BallOverflow(f64, f64),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("jet order {0} not supported")]
    JetOrder(usize),
    #[error("unstable step: {0}")]
    Unstable(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Artifact(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Artifact(e.to_string())
    }
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 64,
            Error::Inadmissible(_) | Error::NearSingular(_) => 2,
            Error::Contraction(_) | Error::NoConvergence(_) => 3,
            _ => 1,
        }
    }
}
