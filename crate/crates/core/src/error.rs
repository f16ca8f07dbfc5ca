use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Caller supplied an argument outside the documented domain.
    #[error("invalid input: {0}")]
    Input(String),
    /// An iterative solver did not reach the requested tolerance.
    #[error("convergence failure: {0}")]
    Convergence(String),
    /// A formula was evaluated where it is singular or undefined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A request would exceed a hard resource limit.
    #[error("resource limit: {0}")]
    Resource(String),
    /// Quadrature or reduction lost the requested accuracy.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
