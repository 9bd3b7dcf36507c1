use alloc::string::String;

/// Errors raised by the solvers and oracles.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("infeasible dual weights: {0}")]
    Infeasible(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("divergence detected: {0}")]
    Divergence(String),
    #[error("failed to converge: {0}")]
    Convergence(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidInput(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
