use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("utterance is empty after normalization")]
    EmptyUtterance,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown dialogue act `{0}`")]
    UnknownAct(String),

    #[error("invalid slot value {value:?} for slot `{slot}`")]
    InvalidSlotValue { slot: String, value: String },

    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfVocab(u32),

    #[error("token sequence must end with EOS")]
    MissingEos,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model mismatch: {0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
