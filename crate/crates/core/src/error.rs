//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// A type alias for `Result<T, Error>`.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at index {index} in {path}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        index: usize,
        reason: String,
    },

    #[error("schema load error in {path}: {reason}")]
    SchemaLoad { path: PathBuf, reason: String },

    #[error("unknown database id '{db_id}'")]
    UnknownDatabase { db_id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend request failed for cache key {digest}: {reason}")]
    Gateway { digest: String, reason: String },

    #[error("mock backend has no fixture for digest {digest}")]
    MissingFixture { digest: String },

    #[error("empty model response for {context}")]
    EmptyResponse { context: String },

    #[error("no SQL statement found in model response: {snippet:?}")]
    Extraction { snippet: String },

    #[error("invalid prompt input: {0}")]
    PromptInput(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("sqlite error on database '{db_id}': {reason}")]
    Sqlite { db_id: String, reason: String },

    #[error("gold query failed on database '{db_id}': {reason}")]
    GoldExecution { db_id: String, reason: String },

    #[error("predictions do not align with tasks: {0}")]
    Alignment(String),

    #[error("k-means error: {0}")]
    Clustering(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing artifact: expected {path} (run `{hint}` first)")]
    MissingArtifact { path: PathBuf, hint: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
