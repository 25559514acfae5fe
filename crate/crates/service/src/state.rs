//! Read-only data plane: datasets, hazard rasters, models and the scoring
//! segmenter, all registered at startup.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use floodviz_core::io::{read_image, read_mask};
use floodviz_core::manifest::{Manifest, TripletRecord};
use floodviz_core::masks::fit_mask;
use floodviz_core::metrics::MaskPredictor;
use floodviz_core::{BinaryMask, ImageTile};
use floodviz_experiments::config::ModelKind;
use floodviz_experiments::evaluate::{build_segmenter, load_model, ImageModel};
use floodviz_experiments::train::checkpoint_model_kind;
use tokio::sync::Semaphore;

use crate::config::{read_raster_registry, RasterEntry, ServeArgs};
use crate::error::{Error, Result};

/// Raster id that always refers to the tile's own manifest mask.
pub const MANIFEST_MASK_ID: &str = "mask";

pub enum ModelSlot {
    Loading,
    Ready(Arc<dyn ImageModel>),
    Failed(String),
}

impl ModelSlot {
    pub fn status(&self) -> &'static str {
        match self {
            ModelSlot::Loading => "loading",
            ModelSlot::Ready(_) => "ready",
            ModelSlot::Failed(_) => "failed",
        }
    }
}

#[derive(Default)]
pub struct ModelRegistry {
    slots: RwLock<BTreeMap<String, ModelSlot>>,
}

impl ModelRegistry {
    pub fn insert(&self, tag: &str, slot: ModelSlot) {
        self.slots.write().expect("model registry poisoned").insert(tag.to_string(), slot);
    }

    /// `None` for unknown tags.
    pub fn with<T>(&self, tag: &str, f: impl FnOnce(&ModelSlot) -> T) -> Option<T> {
        self.slots.read().expect("model registry poisoned").get(tag).map(f)
    }

    pub fn statuses(&self) -> Vec<(String, &'static str)> {
        self.slots
            .read()
            .expect("model registry poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.status()))
            .collect()
    }
}

pub struct Dataset {
    pub name: String,
    /// Sorted by tile id.
    pub records: Vec<TripletRecord>,
}

pub struct TileRef {
    pub dataset: String,
    pub index: usize,
}

pub struct AppState {
    pub datasets: BTreeMap<String, Dataset>,
    tiles: HashMap<String, TileRef>,
    /// tile id -> raster id -> entry
    rasters: HashMap<String, BTreeMap<String, RasterEntry>>,
    pub models: ModelRegistry,
    pub segmenter: Arc<dyn MaskPredictor>,
    pub permits: Arc<Semaphore>,
    checkpoints: Vec<(String, PathBuf)>,
}

impl AppState {
    /// Registers datasets, rasters, the segmenter and the baselines. GAN
    /// checkpoints are only registered as loading; call
    /// [`AppState::load_checkpoints`] to bring them up.
    pub fn new(args: &ServeArgs) -> Result<Self> {
        if args.max_concurrency == 0 {
            return Err(Error::Startup("max concurrency must be at least 1".into()));
        }
        let mut datasets = BTreeMap::new();
        let mut tiles = HashMap::new();
        for path in &args.manifests {
            let m = Manifest::read(path)?;
            let mut records = m.records.clone();
            records.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
            for (i, r) in records.iter().enumerate() {
                let prev = tiles.insert(
                    r.tile_id.clone(),
                    TileRef {
                        dataset: m.dataset_name.clone(),
                        index: i,
                    },
                );
                if prev.is_some() {
                    return Err(Error::Startup(format!("tile `{}` registered twice", r.tile_id)));
                }
            }
            let name = m.dataset_name.clone();
            if datasets.insert(name.clone(), Dataset { name: name.clone(), records }).is_some() {
                return Err(Error::Startup(format!("dataset `{name}` registered twice")));
            }
        }

        let mut rasters: HashMap<String, BTreeMap<String, RasterEntry>> = HashMap::new();
        if let Some(path) = &args.rasters {
            for e in read_raster_registry(path)? {
                if !tiles.contains_key(&e.tile_id) {
                    return Err(Error::Startup(format!("raster `{}` names unknown tile `{}`", e.raster_id, e.tile_id)));
                }
                if e.raster_id == MANIFEST_MASK_ID {
                    return Err(Error::Startup(format!("raster id `{MANIFEST_MASK_ID}` is reserved")));
                }
                let per_tile = rasters.entry(e.tile_id.clone()).or_default();
                if let Some(c) = e.category {
                    if per_tile.values().any(|o| o.category == Some(c)) {
                        return Err(Error::Startup(format!("tile `{}` has two category {c} rasters", e.tile_id)));
                    }
                }
                if per_tile.insert(e.raster_id.clone(), e.clone()).is_some() {
                    return Err(Error::Startup(format!("raster `{}` registered twice for `{}`", e.raster_id, e.tile_id)));
                }
            }
        }

        let models = ModelRegistry::default();
        for kind in ModelKind::ALL.into_iter().filter(|k| !k.is_trainable()) {
            models.insert(kind.tag(), ModelSlot::Ready(Arc::from(load_model(kind, None)?)));
        }
        let mut checkpoints = Vec::new();
        for path in &args.checkpoints {
            let tag = checkpoint_model_kind(path)?.tag().to_string();
            if models.with(&tag, |_| ()).is_some() {
                return Err(Error::Startup(format!("model `{tag}` registered twice")));
            }
            models.insert(&tag, ModelSlot::Loading);
            checkpoints.push((tag, path.clone()));
        }

        Ok(Self {
            datasets,
            tiles,
            rasters,
            models,
            segmenter: Arc::from(build_segmenter(&args.segmenter_source())?),
            permits: Arc::new(Semaphore::new(args.max_concurrency)),
            checkpoints,
        })
    }

    /// Loads every registered checkpoint, flipping its slot to ready or
    /// failed. Blocking.
    pub fn load_checkpoints(&self) {
        for (tag, path) in &self.checkpoints {
            let kind: ModelKind = tag.parse().expect("tag read from a checkpoint");
            let slot = match load_model(kind, Some(path)) {
                Ok(m) => {
                    tracing::info!(%tag, path = %path.display(), "model ready");
                    ModelSlot::Ready(Arc::from(m))
                }
                Err(e) => {
                    tracing::error!(%tag, path = %path.display(), error = %e, "model failed to load");
                    ModelSlot::Failed(e.to_string())
                }
            };
            self.models.insert(tag, slot);
        }
    }

    pub fn tile(&self, tile_id: &str) -> Option<&TripletRecord> {
        let r = self.tiles.get(tile_id)?;
        self.datasets.get(&r.dataset).map(|d| &d.records[r.index])
    }

    pub fn rasters_for(&self, tile_id: &str) -> impl Iterator<Item = &RasterEntry> {
        self.rasters.get(tile_id).into_iter().flat_map(|m| m.values())
    }

    pub fn raster(&self, tile_id: &str, raster_id: &str) -> Option<&RasterEntry> {
        self.rasters.get(tile_id)?.get(raster_id)
    }

    pub fn category_raster(&self, tile_id: &str, category: u8) -> Option<&RasterEntry> {
        self.rasters_for(tile_id).find(|e| e.category == Some(category))
    }
}

pub fn load_pre(rec: &TripletRecord) -> floodviz_core::Result<ImageTile> {
    let mut pre = read_image(&rec.pre_path, rec.gsd_m_per_px, rec.event)?;
    pre.tile_id = rec.tile_id.clone();
    Ok(pre)
}

/// Reads a mask raster covering the tile's extent and brings it to the
/// tile dims.
pub fn load_tile_mask(path: &Path, rec: &TripletRecord, dims: (usize, usize)) -> floodviz_core::Result<BinaryMask> {
    let (mh, _) = floodviz_core::io::raster_dims(path)?;
    let gsd = rec.gsd_m_per_px * dims.0 as f64 / mh.max(1) as f64;
    fit_mask(&read_mask(path, gsd)?, dims)
}
