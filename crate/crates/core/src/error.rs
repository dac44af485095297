use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed http request: {0}")]
    HttpParse(String),

    #[error("schema version mismatch in {artifact}: expected {expected}, found {found}")]
    SchemaVersion {
        artifact: String,
        expected: u32,
        found: u32,
    },

    #[error("invalid artifact {artifact}: {reason}")]
    InvalidArtifact { artifact: String, reason: String },

    #[error("record sequence is empty")]
    EmptyTable,

    #[error("pair <{app}, {key}> not found")]
    PairNotFound { app: String, key: String },

    #[error("value set is empty")]
    EmptyValues,

    #[error("invalid rule set: {0}")]
    Rules(String),

    #[error("conflicting overrides for <{app}, {key}>")]
    ConflictingOverride { app: String, key: String },

    #[error("labeled dataset is empty")]
    EmptyDataset,

    #[error("invalid split: {0}")]
    Split(String),

    #[error("training set must contain both classes")]
    SingleClass,

    #[error("feature vector has {found} values, expected {expected}")]
    Arity { expected: usize, found: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("invalid synthetic config: {0}")]
    SynthConfig(String),
}
