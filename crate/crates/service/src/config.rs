use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use floodviz_experiments::config::{SegmenterSource, DEFAULT_COLOR_TOLERANCE};
use floodviz_core::baselines::FLOOD_BROWN;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Service configuration. Every flag can also come from the environment.
#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    #[arg(long, env = "FLOODVIZ_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,

    /// Manifest files; each registers a dataset named after its file stem.
    #[arg(long = "manifest", env = "FLOODVIZ_MANIFESTS", value_delimiter = ',', required = true)]
    pub manifests: Vec<PathBuf>,

    /// GAN checkpoints, registered under the model tag stored inside.
    #[arg(long = "checkpoint", env = "FLOODVIZ_CHECKPOINTS", value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,

    /// Segmenter checkpoint used for consistency scoring. Without one the
    /// flood-brown color match scores images.
    #[arg(long, env = "FLOODVIZ_SEGMENTER")]
    pub segmenter: Option<PathBuf>,

    /// JSON-lines registry of per-tile hazard rasters.
    #[arg(long, env = "FLOODVIZ_RASTERS")]
    pub rasters: Option<PathBuf>,

    #[arg(long, env = "FLOODVIZ_MAX_CONCURRENCY", default_value_t = 2)]
    pub max_concurrency: usize,
}

impl ServeArgs {
    pub fn new(manifests: Vec<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            manifests,
            checkpoints: Vec::new(),
            segmenter: None,
            rasters: None,
            max_concurrency: 2,
        }
    }

    pub fn segmenter_source(&self) -> SegmenterSource {
        match &self.segmenter {
            Some(path) => SegmenterSource::Checkpoint { path: path.clone() },
            None => SegmenterSource::ColorMatch {
                color: FLOOD_BROWN,
                tolerance: DEFAULT_COLOR_TOLERANCE,
            },
        }
    }
}

/// One line of the raster registry. `category` marks storm-surge category
/// rasters (1 to 5); relative paths resolve against the registry file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RasterEntry {
    pub tile_id: String,
    pub raster_id: String,
    #[serde(default)]
    pub category: Option<u8>,
    pub path: PathBuf,
}

pub const CATEGORIES: std::ops::RangeInclusive<u8> = 1..=5;

pub fn read_raster_registry(path: &Path) -> Result<Vec<RasterEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Startup(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: RasterEntry = serde_json::from_str(line)
            .map_err(|err| Error::Startup(format!("{}:{}: {err}", path.display(), i + 1)))?;
        if let Some(c) = e.category {
            if !CATEGORIES.contains(&c) {
                return Err(Error::Startup(format!(
                    "{}:{}: category {c} outside 1-5",
                    path.display(),
                    i + 1
                )));
            }
        }
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_relative_paths_and_checks_categories() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("rasters.jsonl");
        std::fs::write(
            &p,
            "{\"tile_id\":\"a\",\"raster_id\":\"cat3\",\"category\":3,\"path\":\"r/a3.png\"}\n\n\
             {\"tile_id\":\"a\",\"raster_id\":\"extent\",\"path\":\"/abs.png\"}\n",
        )
        .unwrap();
        let r = read_raster_registry(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].path, tmp.path().join("r/a3.png"));
        assert_eq!(r[1].category, None);
        assert_eq!(r[1].path, PathBuf::from("/abs.png"));

        std::fs::write(&p, "{\"tile_id\":\"a\",\"raster_id\":\"x\",\"category\":6,\"path\":\"x.png\"}\n").unwrap();
        assert!(read_raster_registry(&p).is_err());
    }
}
