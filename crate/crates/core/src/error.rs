//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. Variants are grouped by how a
//! caller should react, which is also how the CLI maps them to exit codes:
//! usage and shape problems are caller bugs, numeric problems mean a
//! computation produced unusable values, and data/format/io problems come
//! from the outside world.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor shape or operation specification was violated.
    #[error("shape error: {0}")]
    Shape(String),

    /// A model, training, or run configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An API was used out of order (for example backward twice on one tape).
    #[error("usage error: {0}")]
    Usage(String),

    /// A computation produced non-finite values or diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input data (labels, palettes, dataset layout) is inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A byte stream failed to parse; `offset` is the byte position.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }
}
