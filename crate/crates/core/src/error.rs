use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A caller-supplied value is out of its legal range.
    #[error("invalid input: {0}")]
    Input(String),

    /// An API was used in the wrong order or with missing prerequisites.
    #[error("usage error: {0}")]
    Usage(String),

    /// Fabric construction parameters are inconsistent.
    #[error("invalid fabric: {0}")]
    Construction(String),

    /// A file did not match the expected layout.
    #[error("format error in {path:?} at byte {offset}: {detail}")]
    Format { path: PathBuf, offset: u64, detail: String },

    /// Training diverged.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
