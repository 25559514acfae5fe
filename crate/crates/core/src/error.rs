use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scene {scene:?} is smaller than the {tile_px}px tile size")]
    SceneTooSmall { scene: (usize, usize), tile_px: usize },

    #[error("raster contains NaN at index {0}")]
    NaN(usize),

    #[error("no complete (pre, mask, post) triples found")]
    NoTriples,

    #[error("duplicate tile id `{0}`")]
    DuplicateTile(String),

    #[error("unknown event `{0}`")]
    UnknownEvent(String),

    #[error("invalid color `{0}`: expected #RRGGBB")]
    InvalidColor(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    /// A failure inside a learned model backing one of the metric traits.
    #[error("model: {0}")]
    Model(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: png decode: {source}")]
    PngDecode {
        path: PathBuf,
        #[source]
        source: png::DecodingError,
    },

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("{path}: tiff: {source}")]
    Tiff {
        path: PathBuf,
        #[source]
        source: tiff::TiffError,
    },

    #[error("unsupported raster format: {0}")]
    Unsupported(String),

    #[error("manifest line {line}: {source}")]
    ManifestParse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
