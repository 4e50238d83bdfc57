use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    /// Training labels contain a single class; callers fall back to a global model.
    #[error("single-class labels: only class {class} present in {n} rows")]
    SingleClass { class: u8, n: usize },

    /// Fewer rows than a model family needs; callers fall back to a global model.
    #[error("too few rows: {n} < {min}")]
    TooFewRows { n: usize, min: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True when a per-cluster fit should defer to the global model.
    pub fn is_fallback(&self) -> bool {
        matches!(self, Error::SingleClass { .. } | Error::TooFewRows { .. })
    }

    /// True for failures of the numeric machinery rather than of the data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::ZeroVariance(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            path: String::from("<csv>"),
            line,
            message: e.to_string(),
        }
    }
}
