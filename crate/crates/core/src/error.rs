use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("z = {z} is outside the domain: {reason}")]
    Domain { z: C64, reason: String },
    #[error("fixed point did not converge at z = {z} (last residual {residual:e})")]
    Solver { z: C64, residual: f64 },
    #[error("non-finite integrand at node {index} (z = {z})")]
    Evaluation { index: usize, z: C64 },
    #[error("contour geometry: {0}")]
    Geometry(String),
    #[error("near-singular denominator at z = {z}: |d| = {value:e}")]
    Singular { z: C64, value: f64 },
    #[error("matrix error: {0}")]
    Matrix(String),
    #[error("{what} is not real: imaginary part {im:e} against real part {re}")]
    NotReal { what: String, re: f64, im: f64 },
    #[error("non-positive variance {0}")]
    Variance(f64),
    #[error("config: {0}")]
    Config(String),
    #[error("{failed} of {total} replications failed, over the allowed budget")]
    Budget { failed: usize, total: usize },
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Process exit status: 1 for configuration and I/O problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Validation(_) | Error::Dimension(_) | Error::Config(_) | Error::Io { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Error::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub(crate) fn domain(z: C64, reason: impl Into<String>) -> Self {
        Error::Domain { z, reason: reason.into() }
    }
}
