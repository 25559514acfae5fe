use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] floodviz_core::Error),

    #[error(transparent)]
    Model(#[from] floodviz_models::Error),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error("invalid run config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("baselines are not trainable: `{0}` has no weights to fit")]
    NotTrainable(String),

    #[error("{0} split of the manifest is empty")]
    EmptySplit(&'static str),

    #[error("non-finite {what} loss at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("evaluation needs a segmenter")]
    MissingSegmenter,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
