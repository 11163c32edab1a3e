use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {field}: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("integrity failure: {0}")]
    Integrity(String),

    #[error("malicious proxy detected: {0}")]
    MaliciousProxy(String),

    #[error("state error: {0}")]
    State(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn parameter(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { field, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
