use std::io;

use thiserror::Error;

/// Errors produced by the click-model toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range (length {len})")]
    Index { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("instance too large for exhaustive enumeration: {indicators} indicators (limit {limit})")]
    Capacity { indicators: usize, limit: usize },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("{source_name}, line {line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by the filesystem rather than by the input values.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} = {p} is not a probability in [0, 1]")))
    }
}
