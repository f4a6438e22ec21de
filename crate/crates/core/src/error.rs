use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatchAtLine {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate sample_id `{0}`")]
    DuplicateSample(String),

    #[error("empty set")]
    EmptySet,

    #[error("degenerate embedding: norm {0:e} below guard")]
    DegenerateEmbedding(f64),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hierarchy degenerate: {0}")]
    HierarchyDegenerate(String),

    #[error("non-finite value in parameter group `{0}`")]
    NonFinite(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
