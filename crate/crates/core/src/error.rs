use thiserror::Error;

#[derive(Debug, Error)]
pub enum VrlError {
    /// Malformed record in an input file.
    #[error("record {line}: {msg}")]
    Ingest { line: usize, msg: String },

    /// A token in an input file does not name a node of the loaded graph.
    #[error("unknown {kind} `{token}` at line {line}")]
    UnknownToken {
        kind: &'static str,
        token: String,
        line: usize,
    },

    /// An id passed to an adjacency query does not exist in the graph.
    #[error("unknown {kind} index {index}")]
    Lookup { kind: &'static str, index: u32 },

    /// A caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("scene generation: {0}")]
    Generation(String),

    #[error("replay memory is empty")]
    EmptyReplay,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, VrlError>;

impl VrlError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        VrlError::Io {
            path: path.into(),
            source,
        }
    }
}
