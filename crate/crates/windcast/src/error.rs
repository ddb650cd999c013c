//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between arrays.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Factorization hit a non-positive pivot; `minor` is the 1-based order
    /// of the offending leading principal minor.
    #[error("matrix not positive definite: leading minor of order {minor} is not positive")]
    NotPositiveDefinite { minor: usize },

    /// A matrix that must be symmetric was not, beyond tolerance.
    #[error("matrix not symmetric: max |M[i,j] - M[j,i]| = {max_asym:e} exceeds {tol:e}")]
    NotSymmetric { max_asym: f64, tol: f64 },

    /// Caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed or inconsistent input data (CSV schema, grid gaps, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Iterative training produced a non-finite objective and could not recover.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Root finding for a coupling inverse did not converge.
    #[error("inverse of coordinate {coord} did not converge within {iters} iterations")]
    InverseNoConverge { coord: usize, iters: usize },

    /// Conditioning vector so far out of distribution that every grid cell
    /// underflows.
    #[error("out-of-distribution conditioning: all grid cell densities below {floor:e}")]
    OutOfDistribution { floor: f64 },

    /// Serialized artifact carried the wrong format version.
    #[error("artifact version mismatch: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
