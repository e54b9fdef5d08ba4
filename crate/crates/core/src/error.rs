use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid derivative order {0}; expected 1 or 2")]
    InvalidOrder(u8),

    #[error("degenerate scale: {0}")]
    Degenerate(String),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("non-finite integrand value {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
