use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("query has no tokens after segmentation: {0:?}")]
    EmptyQuery(String),

    #[error("corpus contains no usable records")]
    EmptyCorpus,

    #[error("input sequence is empty")]
    EmptySequence,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("activation cache is stale (cached generation {cached}, params generation {current})")]
    StaleActivationCache { cached: u64, current: u64 },

    #[error("entity vocabulary too small for negative sampling: {0} entities")]
    VocabTooSmall(usize),

    #[error("target entity {0} appears among sampled negatives")]
    TargetInNegatives(u32),

    #[error("entities with zero-norm embeddings: {0:?}")]
    ZeroNormEntity(Vec<String>),

    #[error("index has no coarse clustering")]
    IndexNotClustered,

    #[error("unknown entity {0:?}")]
    UnknownEntity(String),

    #[error("precision cutoff M must be at least 1")]
    MZero,

    #[error("method {method:?}: model checkpoint {model} does not match index checkpoint {index}")]
    MethodIndexMismatch {
        method: String,
        model: String,
        index: String,
    },

    #[error("model checkpoint {model} does not match index checkpoint {index}")]
    IndexMismatch { model: String, index: String },

    #[error("duplicate tag rule pattern {0:?}")]
    DuplicateRulePattern(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("input file missing: {}", .0.display())]
    InputMissing(PathBuf),

    #[error("malformed input at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
