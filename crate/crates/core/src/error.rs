use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ill-posed model: {0}")]
    IllPosed(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("efficacy does not leave mortality growth positive: {0}")]
    NonDominantEfficacy(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("solution left the admissible envelope: {0}")]
    BoundViolation(String),

    #[error("query {value} outside curve range [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("degenerate rate curve: {0}")]
    Degenerate(String),

    #[error("mortality growth left the admissible band: {0}")]
    Instability(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no feasible candidate: {0}")]
    Infeasible(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::IllPosed(_)
            | Error::Domain(_)
            | Error::NonDominantEfficacy(_)
            | Error::Infeasible(_)
            | Error::InsufficientData(_)
            | Error::Extrapolation { .. }
            | Error::Degenerate(_) => 1,
            Error::Parse { .. } | Error::Malformed(_) | Error::Io { .. } => 2,
            Error::NonConvergence(_) | Error::BoundViolation(_) | Error::Instability(_) => 3,
        }
    }
}
