use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} rows malformed in {path} (first at line {first_line})")]
    TooManyMalformed {
        path: PathBuf,
        failed: usize,
        total: usize,
        first_line: usize,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("degenerate corpus: vocabulary has {0} token(s), need at least 2")]
    DegenerateCorpus(usize),

    #[error("empty genre list")]
    EmptyGenreList,

    #[error("empty input")]
    EmptyInput,

    #[error("no embedding stored for item {0:?}")]
    MissingEmbedding(String),

    #[error("no embeddings for items: {0:?}")]
    MissingEmbeddings(Vec<String>),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("training diverged: mean loss {loss} at epoch {epoch}")]
    DivergedLoss { epoch: usize, loss: f64 },

    #[error("no positive training pairs")]
    NoPositivePairs,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid weights {0:?}: must be non-negative and sum to 1")]
    InvalidWeights(Vec<f64>),

    #[error("corrupt {kind} file: {reason}")]
    Corrupt { kind: &'static str, reason: String },

    #[error("unknown seed id {0:?}")]
    UnknownSeedId(String),

    #[error("index was built from a different model or tf-idf vocabulary")]
    IncompatibleIndex,

    #[error("index was built with text provider {index} but {active} is active")]
    ProviderMismatch { index: String, active: String },

    #[error("no users rated both domains favourably")]
    NoEvalUsers,

    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn corrupt(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            kind,
            reason: reason.into(),
        }
    }
}
