use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the tensor engine, the loss modules and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    Contract(String),

    #[error("non-finite {component} loss: {value}")]
    NonFinite { component: &'static str, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("inconsistent feature width for scale {scale}: expected {expected}, found {found} (line {line})")]
    Width {
        scale: usize,
        expected: usize,
        found: usize,
        line: usize,
    },

    #[error("batch {batch} of epoch {epoch}: {source}")]
    Batch {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
