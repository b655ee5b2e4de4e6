use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the evaluation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("phrase {0:?} has no tokens after normalization")]
    EmptyPhrase(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("document {0:?} is not present in the corpus")]
    MissingDoc(String),

    #[error("reference set is empty")]
    EmptyReferences,

    #[error("prediction set is empty")]
    EmptyPredictions,

    #[error("empty set")]
    EmptySet,

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("no embedding for phrase {0:?}")]
    MissingEmbedding(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider protocol error: {0}")]
    Protocol(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("query has no searchable terms")]
    EmptyQuery,

    #[error("index cache is stale: built for corpus {expected}, current corpus is {actual}")]
    StaleIndex { expected: String, actual: String },

    #[error("p_yes + p_no must be positive")]
    DegenerateMass,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("need at least 2 paired values, got {0}")]
    TooFewPoints(usize),

    #[error("zero variance")]
    ZeroVariance,

    #[error("all pairs tied")]
    AllTied,

    #[error("{degenerate} of {total} bootstrap resamples were degenerate")]
    TooFewValid { degenerate: usize, total: usize },

    #[error("need at least 2 distinct phrases, got {0}")]
    TooFewPhrases(usize),

    #[error("non-finite value for {0}")]
    NonFinite(String),

    #[error("unmatched ids: {}", .0.join(", "))]
    UnmatchedIds(Vec<String>),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
