use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid triple (user {user}, video {video}, hashtag {hashtag}): {reason}")]
    InvalidTriple {
        user: usize,
        video: usize,
        hashtag: usize,
        reason: String,
    },

    #[error("video {video} has two uploaders ({first} and {second})")]
    DuplicateUploader {
        video: usize,
        first: usize,
        second: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("index out of range: {kind} {index} (count {count})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        count: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate sample space: {0}")]
    Degenerate(String),

    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing feature row for video {0}")]
    MissingFeature(String),

    #[error("unknown {kind} {name}")]
    UnknownEntity { kind: &'static str, name: String },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable tag used by the command line's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::EmptyInput(_) => "empty_input",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidTriple { .. } => "invalid_triple",
            Error::DuplicateUploader { .. } => "duplicate_uploader",
            Error::InvalidGraph(_) => "invalid_graph",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Degenerate(_) => "degenerate",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::Parse { .. } => "parse",
            Error::MissingFeature(_) => "missing_feature",
            Error::UnknownEntity { .. } => "unknown_entity",
            Error::VocabularyMismatch(_) => "vocabulary_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
