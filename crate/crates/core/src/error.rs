use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("resonance: {0}")]
    Resonance(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
