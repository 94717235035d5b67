use thiserror::Error;

use crate::math::MathError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Math(#[from] MathError),

    /// Malformed input file. `location` is a line/column or a field path.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lexicalization error: unresolved token `{0}`")]
    Lexicalization(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoint and ontology/corpus do not belong together.
    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    /// The requested operation does not exist for this model mode.
    #[error("mode error: {0}")]
    Mode(String),

    #[error("synthetic corpus spec error: {0}")]
    Spec(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
