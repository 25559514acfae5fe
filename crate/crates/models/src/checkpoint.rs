//! Single-file checkpoints: safetensors weights plus string metadata
//! (format version, config JSON and its hash, dataset fingerprint, epoch).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{Device, Tensor};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// What the checkpoint holds, e.g. `gan` or `segmenter`.
    pub kind: String,
    pub config_json: String,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub epoch: usize,
}

impl CheckpointMeta {
    pub fn new<C: Serialize>(
        kind: &str,
        config: &C,
        dataset_fingerprint: &str,
        epoch: usize,
    ) -> Result<Self> {
        let config_json = serde_json::to_string(config)?;
        Ok(Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.to_string(),
            config_hash: config_hash(config)?,
            config_json,
            dataset_fingerprint: dataset_fingerprint.to_string(),
            epoch,
        })
    }

    fn to_map(&self) -> HashMap<String, String> {
        HashMap::from([
            (
                "format_version".to_string(),
                self.format_version.to_string(),
            ),
            ("kind".to_string(), self.kind.clone()),
            ("config".to_string(), self.config_json.clone()),
            ("config_hash".to_string(), self.config_hash.clone()),
            (
                "dataset_fingerprint".to_string(),
                self.dataset_fingerprint.clone(),
            ),
            ("epoch".to_string(), self.epoch.to_string()),
        ])
    }

    fn from_map(path: &Path, map: &HashMap<String, String>) -> Result<Self> {
        let field = |k: &str| {
            map.get(k).cloned().ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("metadata field `{k}` missing"),
            })
        };
        let number = |k: &str| {
            field(k)?.parse::<u64>().map_err(|e| Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("metadata field `{k}`: {e}"),
            })
        };
        Ok(Self {
            format_version: number("format_version")? as u32,
            kind: field("kind")?,
            config_json: field("config")?,
            config_hash: field("config_hash")?,
            dataset_fingerprint: field("dataset_fingerprint")?,
            epoch: number("epoch")? as usize,
        })
    }
}

/// SHA-256 of the compact JSON serialization.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

pub fn save_checkpoint(
    path: &Path,
    tensors: &BTreeMap<String, Tensor>,
    meta: &CheckpointMeta,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    safetensors::serialize_to_file(tensors.iter(), Some(meta.to_map()), &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads only the metadata header.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)?;
    let map = header.metadata().clone().unwrap_or_default();
    CheckpointMeta::from_map(path, &map)
}

/// Loads a checkpoint. When `expected_hash` is given and differs from the
/// stored one, loading is refused unless `force` is set.
pub fn load_checkpoint(
    path: &Path,
    device: &Device,
    expected_hash: Option<&str>,
    force: bool,
) -> Result<(CheckpointMeta, HashMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)?;
    let meta = CheckpointMeta::from_map(path, &header.metadata().clone().unwrap_or_default())?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                meta.format_version
            ),
        });
    }
    if let Some(expected) = expected_hash {
        if expected != meta.config_hash {
            if !force {
                return Err(Error::ConfigHashMismatch {
                    path: path.to_path_buf(),
                    expected: expected.to_string(),
                    found: meta.config_hash.clone(),
                });
            }
            tracing::warn!(path = %path.display(), "loading checkpoint with a mismatched config hash (forced)");
        }
    }
    let st = safetensors::SafeTensors::deserialize(&bytes)?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        tensors.insert(name, view.load(device)?);
    }
    Ok((meta, tensors))
}
