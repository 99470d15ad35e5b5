use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ForgeError>;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("document `{doc_id}` is empty after preprocessing")]
    DocumentEmptied { doc_id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid rule pattern `{pattern}`: {source}")]
    Rule {
        pattern: String,
        #[source]
        source: regex::Error,
    },

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("cannot draw {needed} distinct integer distractors around {value}: only {available} candidates")]
    InsufficientRange {
        value: String,
        needed: usize,
        available: String,
    },

    #[error("numeric variable `{nv_id}` does not match its span in the host text")]
    StaleSpan { nv_id: String },

    #[error("shape mismatch in layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("layer sets differ: {0}")]
    LayerMismatch(String),

    #[error("numerical failure in layer `{layer}`: {detail}")]
    Numerical { layer: String, detail: String },

    #[error("need {needed} few-shot exemplars, got {available}")]
    InsufficientExemplars { needed: usize, available: usize },

    #[error("no prediction for question `{0}`")]
    MissingPrediction(String),

    #[error("empty score list")]
    EmptyScores,

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid input: {0}")]
    Input(String),
}

impl ForgeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        ForgeError::Json {
            context: context.into(),
            source,
        }
    }
}
