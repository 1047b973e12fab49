use std::path::PathBuf;

use crate::taxonomy::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown {kind} `{name}`")]
    RegistryMiss { kind: &'static str, name: String },

    #[error("invalid item: {0}")]
    InvalidItem(String),

    #[error("template `{template_id}` has no binding for slot {slot}")]
    MissingSlot { template_id: String, slot: String },

    #[error("template pattern error: {0}")]
    Pattern(String),

    #[error("invalid combination: {0}")]
    InvalidCombination(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{} validation error(s), first: {}", .0.len(), .0.first().map(|d| d.to_string()).unwrap_or_default())]
    Validation(Vec<Diagnostic>),

    #[error("input error: {0}")]
    Input(String),

    #[error("unsupported schema_version {found} in {what} (expected {expected})")]
    SchemaVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

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
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn miss(kind: &'static str, name: impl Into<String>) -> Self {
        Error::RegistryMiss {
            kind,
            name: name.into(),
        }
    }
}
