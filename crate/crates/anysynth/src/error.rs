use std::path::PathBuf;

use anysynth_core::CoreError;

use crate::protocol::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("image encoding failed for {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Parse { what: what.into(), detail: detail.to_string() }
    }
}
