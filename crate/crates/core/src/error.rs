use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layer specs or experiment settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order or with an unusable argument.
    #[error("usage error: {0}")]
    Usage(String),

    /// The network cannot be mapped onto integrate-and-fire layers.
    #[error("conversion error: {0}")]
    Conversion(String),

    /// A checkpoint, export or manifest file is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
