use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The mask has no strictly positive cell, so there is nothing to search for.
    #[error("query mask has no positive cells")]
    EmptyQuery,

    /// The masked query features are all zero; cosine similarity is undefined.
    #[error("query features have zero norm under the mask")]
    DegenerateQuery,

    #[error("store already exists at {0}")]
    AlreadyExists(PathBuf),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("chunk {chunk} is corrupt: {detail}")]
    Corruption { chunk: u32, detail: String },

    /// Store metadata (manifest or index) cannot be decoded.
    #[error("store metadata is corrupt: {0}")]
    CorruptMetadata(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors that indicate damaged data rather than bad input.
    pub fn is_corruption(&self) -> bool {
        matches!(self, Error::Corruption { .. } | Error::CorruptMetadata(_))
    }
}
