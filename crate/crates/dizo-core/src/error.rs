//! Error taxonomy shared by every module.
//!
//! Three failure classes cover the whole crate: configuration errors
//! (rejected before any state is touched), structural errors (shape or
//! layer-layout mismatches between values that should agree), and numeric
//! errors (non-finite values produced or observed mid-computation).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, unknown names, violated preconditions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape, dimension, or layer-layout mismatch.
    #[error("structural error: {0}")]
    Structure(String),

    /// Non-finite value produced or observed.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed checkpoint or data file.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
