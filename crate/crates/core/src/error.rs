use thiserror::Error;

/// Errors raised by the inference engines and the distribution layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqlmError {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature did not meet its tolerance within the subdivision budget.
    #[error("quadrature failed to converge: estimate {estimate:e}, error estimate {abs_error:e} after {subdivisions} subdivisions")]
    Quadrature {
        estimate: f64,
        abs_error: f64,
        subdivisions: usize,
    },

    /// A numerical routine produced a non-finite or otherwise invalid value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A Gibbs block produced a non-finite draw.
    #[error("non-finite draw in block `{block}` at sweep {sweep}")]
    ChainDiverged { sweep: usize, block: &'static str },

    /// Inconsistent model, prior or data dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, DqlmError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(DqlmError::Domain(msg.into()))
}
