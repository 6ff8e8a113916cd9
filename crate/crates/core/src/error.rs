use std::path::PathBuf;

use crate::capture::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported capture version {0}")]
    UnsupportedVersion(u64),

    #[error("capture failed validation with {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("geometry mismatch: expected {expected} heads, found {found}")]
    GeometryMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no voters survive baseline {baseline:.6}")]
    NoVotersSurvive { baseline: f64 },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("selection and evaluation samples overlap ({count} shared ids, e.g. {example:?})")]
    Overlap { count: usize, example: String },

    #[error("unpaired sample ids between captures ({count}, e.g. {example:?})")]
    Unpaired { count: usize, example: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for faults in the data (as opposed to caller configuration).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::UnsupportedVersion(_)
                | Error::Invalid(_)
                | Error::GeometryMismatch { .. }
                | Error::Missing(_)
                | Error::Unpaired { .. }
                | Error::Json(_)
                | Error::LengthMismatch { .. }
        )
    }
}
