use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerical(#[from] drago_core::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration and input problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Numerical(e) => match e {
                drago_core::Error::InvalidInput(_) | drago_core::Error::Unsupported(_) => 2,
                _ => 3,
            },
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
