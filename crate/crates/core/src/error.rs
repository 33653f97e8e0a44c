use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary container could not be decoded. `field` names the header field or
    /// section that was wrong.
    #[error("{format} parse error in `{field}`: {detail}")]
    Parse {
        format: &'static str,
        field: String,
        detail: String,
    },

    #[error("events file row {row}: {detail}")]
    Events { row: usize, detail: String },

    #[error("requested {requested} windows but only {achievable} fit in the admissible span")]
    InsufficientSpan { requested: usize, achievable: usize },

    #[error("architecture fingerprint mismatch: weights were saved for {found}, expected {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(format: &'static str, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            format,
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
