use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("block {0} declared twice")]
    DuplicateBlock(String),
    #[error("reference to undeclared variable: {0}")]
    UnknownBlock(String),
    #[error("constraint {0} has a non-real coefficient")]
    NotReal(String),
    #[error("constant equality {0} does not hold")]
    Inconsistent(String),
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("PSD constraint {0} is not Hermitian")]
    NonHermitianConstraint(String),
    #[error("objective has a non-real part")]
    ComplexObjective,
    #[error("invalid ellipsoid: {0}")]
    InvalidEllipsoid(String),
}
