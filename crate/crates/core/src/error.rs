use thiserror::Error;

/// Errors raised by the geometry engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no path: {0}")]
    NoPath(String),
    #[error("singular evaluation: {0}")]
    SingularEvaluation(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("unsupported metric family: {0}")]
    UnsupportedFamily(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;

impl From<std::io::Error> for GeomError {
    fn from(e: std::io::Error) -> Self {
        GeomError::Io(e.to_string())
    }
}

impl From<csv::Error> for GeomError {
    fn from(e: csv::Error) -> Self {
        GeomError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GeomError {
    fn from(e: serde_json::Error) -> Self {
        GeomError::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GeomError::InvalidInput(msg.into()))
}
