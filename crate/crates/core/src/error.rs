use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structurally invalid input (bad edge list, inconsistent shapes, bad ranges).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("numerical divergence at {at}: {message}")]
    Divergence { at: String, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("mesh hash mismatch: checkpoint expects {expected}, mesh has {actual}")]
    MeshHash { expected: String, actual: String },

    #[error("query {query:?} lies outside the convex hull of the interpolation data")]
    OutOfHull { query: Vec<f64> },

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected,
                actual,
            })
        }
    }
}
