use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("build error: {0}")]
    Build(String),
    #[error("asymmetric PSD block: entries ({0},{1}) and ({1},{0}) differ")]
    Asymmetric(usize, usize),
    /// The conic engine itself failed (as opposed to reporting a status).
    #[error("solver transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
