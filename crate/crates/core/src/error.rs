use conic::{ConicError, Status};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QkdError {
    /// a parameter outside its documented range
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("solver returned {status} for {context}")]
    Solver { status: Status, context: String },
    /// no quantum state reproduces the given probabilities
    #[error("statistics are not compatible with any quantum state ({0}); use the credible-region mode")]
    InfeasibleStatistics(String),
    #[error("symmetry check failed: {0}")]
    Symmetry(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("attack reconstruction failed: {0}")]
    Reconstruction(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl QkdError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            QkdError::InvalidInput(_) => "invalid-input",
            QkdError::Dimension(_) => "dimension",
            QkdError::NotHermitian(_) => "not-hermitian",
            QkdError::Unsupported(_) => "unsupported",
            QkdError::Conic(_) => "program",
            QkdError::Solver { .. } => "solver",
            QkdError::InfeasibleStatistics(_) => "infeasible-statistics",
            QkdError::Symmetry(_) => "symmetry",
            QkdError::Sampler(_) => "sampler",
            QkdError::Reconstruction(_) => "reconstruction",
            QkdError::Parse(_) => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, QkdError>;
