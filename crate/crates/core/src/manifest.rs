//! Triplet manifests: discovery from directories, JSON-lines persistence and
//! deterministic train/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{file_stem, is_raster_path, raster_dims};
use crate::raster::Event;

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One `(pre, mask, post)` triple. Serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub tile_id: String,
    pub pre_path: PathBuf,
    pub mask_path: PathBuf,
    pub post_path: PathBuf,
    pub event: Event,
    pub split: Split,
    pub gsd_m_per_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset_name: String,
    pub version: String,
    pub records: Vec<TripletRecord>,
}

impl Manifest {
    pub fn new(dataset_name: impl Into<String>, records: Vec<TripletRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.tile_id.as_str()) {
                return Err(Error::DuplicateTile(r.tile_id.clone()));
            }
        }
        Ok(Self {
            dataset_name: dataset_name.into(),
            version: MANIFEST_VERSION.to_string(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TripletRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, tile_id: &str) -> Option<&TripletRecord> {
        self.records.iter().find(|r| r.tile_id == tile_id)
    }

    /// A manifest holding only the records of `split`.
    pub fn subset(&self, split: Split) -> Manifest {
        Manifest {
            dataset_name: self.dataset_name.clone(),
            version: self.version.clone(),
            records: self.split(split).cloned().collect(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(dataset_name: impl Into<String>, text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line).map_err(|source| Error::ManifestParse { line: i + 1, source })?;
            records.push(rec);
        }
        Self::new(dataset_name, records)
    }

    /// Writes JSON lines, storing record paths relative to the manifest's
    /// directory where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut rel = self.clone();
        for r in &mut rel.records {
            for p in [&mut r.pre_path, &mut r.mask_path, &mut r.post_path] {
                if let Ok(stripped) = p.strip_prefix(base) {
                    *p = stripped.to_path_buf();
                }
            }
        }
        crate::io::write_bytes(path, rel.to_jsonl()?.as_bytes())
    }

    /// Loads a manifest. Relative record paths are resolved against the
    /// manifest's directory; the dataset name is the file stem.
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let mut m = Self::from_jsonl(file_stem(path), &text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &mut m.records {
            for p in [&mut r.pre_path, &mut r.mask_path, &mut r.post_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }
}

/// Options for [`build_manifest`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Event used when the tile id does not start with a known event name.
    pub default_event: Event,
    pub gsd_m_per_px: f64,
    /// Check that all three rasters have consistent spatial extent.
    pub check_dims: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            default_event: Event::Synthetic,
            gsd_m_per_px: 0.5,
            check_dims: true,
        }
    }
}

/// Result of [`build_manifest`]: the complete triples plus the tile ids
/// that were missing one or more members.
#[derive(Debug, Clone)]
pub struct ManifestBuild {
    pub manifest: Manifest,
    pub incomplete: Vec<IncompleteTriple>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncompleteTriple {
    pub tile_id: String,
    pub missing: Vec<&'static str>,
}

fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_raster_path(&path) {
            continue;
        }
        let stem = file_stem(&path);
        if out.insert(stem.clone(), path).is_some() {
            return Err(Error::DuplicateTile(stem));
        }
    }
    Ok(out)
}

/// Event named by the leading `_`-separated token of a tile id, if any.
pub fn event_from_tile_id(tile_id: &str) -> Option<Event> {
    tile_id.split(['_', '-']).next()?.parse().ok()
}

/// Pairs files across the three directories by shared file stem.
pub fn build_manifest(
    pre_dir: &Path,
    mask_dir: &Path,
    post_dir: &Path,
    dataset_name: &str,
    opts: &BuildOptions,
) -> Result<ManifestBuild> {
    let pre = index_dir(pre_dir)?;
    let mask = index_dir(mask_dir)?;
    let post = index_dir(post_dir)?;
    let ids: BTreeSet<&String> = pre.keys().chain(mask.keys()).chain(post.keys()).collect();

    let mut records = Vec::new();
    let mut incomplete = Vec::new();
    for id in ids {
        let (p, m, q) = (pre.get(id), mask.get(id), post.get(id));
        let (Some(p), Some(m), Some(q)) = (p, m, q) else {
            let missing = [("pre", p.is_none()), ("mask", m.is_none()), ("post", q.is_none())]
                .into_iter()
                .filter_map(|(name, miss)| miss.then_some(name))
                .collect();
            incomplete.push(IncompleteTriple {
                tile_id: id.clone(),
                missing,
            });
            continue;
        };
        if opts.check_dims {
            let (pd, md, qd) = (raster_dims(p)?, raster_dims(m)?, raster_dims(q)?);
            let divides = md.0 > 0 && md.1 > 0 && pd.0 % md.0 == 0 && pd.1 % md.1 == 0;
            if pd != qd || !divides {
                return Err(Error::InvalidRaster(format!(
                    "tile `{id}`: inconsistent extents pre {pd:?}, mask {md:?}, post {qd:?}"
                )));
            }
        }
        records.push(TripletRecord {
            tile_id: id.clone(),
            pre_path: p.clone(),
            mask_path: m.clone(),
            post_path: q.clone(),
            event: event_from_tile_id(id).unwrap_or(opts.default_event),
            split: Split::Train,
            gsd_m_per_px: opts.gsd_m_per_px,
        });
    }
    for inc in &incomplete {
        tracing::warn!(tile_id = %inc.tile_id, missing = ?inc.missing, "incomplete triple skipped");
    }
    if records.is_empty() {
        return Err(Error::NoTriples);
    }
    Ok(ManifestBuild {
        manifest: Manifest::new(dataset_name, records)?,
        incomplete,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitPolicy {
    /// Shuffle with `seed` and send `round(n * test_frac)` records to test.
    Random { seed: u64, test_frac: f64 },
    /// Every record of a listed event goes to test; the rest to train.
    ByEvent { test_events: Vec<String> },
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    /// Parses `by-event:harvey,florence` or `random:SEED:FRAC`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(list) = s.strip_prefix("by-event:") {
            return Ok(SplitPolicy::ByEvent {
                test_events: list.split(',').map(|e| e.trim().to_string()).collect(),
            });
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let mut parts = rest.split(':');
            let seed = parts.next().and_then(|v| v.parse().ok());
            let frac = parts.next().and_then(|v| v.parse().ok());
            if let (Some(seed), Some(test_frac)) = (seed, frac) {
                return Ok(SplitPolicy::Random { seed, test_frac });
            }
        }
        Err(Error::InvalidArgument(format!(
            "split policy `{s}`: expected `by-event:a,b` or `random:SEED:FRAC`"
        )))
    }
}

/// Assigns every record to train or test. Deterministic in its inputs and
/// independent of record order.
pub fn split_dataset(manifest: &Manifest, policy: &SplitPolicy) -> Result<Manifest> {
    let mut out = manifest.clone();
    match policy {
        SplitPolicy::Random { seed, test_frac } => {
            if !(0.0..=1.0).contains(test_frac) {
                return Err(Error::InvalidArgument(format!(
                    "test fraction must lie in [0, 1], got {test_frac}"
                )));
            }
            let mut order: Vec<usize> = (0..out.records.len()).collect();
            order.sort_by(|&a, &b| out.records[a].tile_id.cmp(&out.records[b].tile_id));
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let n_test = (out.records.len() as f64 * test_frac).round() as usize;
            for r in &mut out.records {
                r.split = Split::Train;
            }
            for &i in &order[..n_test] {
                out.records[i].split = Split::Test;
            }
        }
        SplitPolicy::ByEvent { test_events } => {
            let events = test_events
                .iter()
                .map(|e| e.parse::<Event>())
                .collect::<Result<HashSet<_>>>()?;
            for r in &mut out.records {
                r.split = if events.contains(&r.event) {
                    Split::Test
                } else {
                    Split::Train
                };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_image, write_mask};
    use crate::raster::{BinaryMask, ImageTile};

    fn record(id: &str, event: Event) -> TripletRecord {
        TripletRecord {
            tile_id: id.into(),
            pre_path: format!("pre/{id}.png").into(),
            mask_path: format!("mask/{id}.png").into(),
            post_path: format!("post/{id}.png").into(),
            event,
            split: Split::Train,
            gsd_m_per_px: 0.5,
        }
    }

    fn paper_like_manifest() -> Manifest {
        let mut recs = Vec::new();
        for (event, n) in [
            (Event::Harvey, 108),
            (Event::Florence, 108),
            (Event::Michael, 150),
            (Event::Matthew, 90),
            (Event::Midwest, 40),
        ] {
            for i in 0..n {
                recs.push(record(&format!("{event}_{i:05}"), event));
            }
        }
        Manifest::new("floods", recs).unwrap()
    }

    #[test]
    fn jsonl_field_names() {
        let line = serde_json::to_value(record("harvey_1", Event::Harvey)).unwrap();
        let keys: BTreeSet<_> = line.as_object().unwrap().keys().cloned().collect();
        let expect: BTreeSet<String> = [
            "tile_id",
            "pre_path",
            "mask_path",
            "post_path",
            "event",
            "split",
            "gsd_m_per_px",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(keys, expect);
        assert_eq!(line["event"], "harvey");
        assert_eq!(line["split"], "train");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Manifest::new("d", vec![record("a", Event::Harvey), record("a", Event::Harvey)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateTile(id) if id == "a"));
    }

    #[test]
    fn by_event_split_matches_test_set_size() {
        let m = paper_like_manifest();
        let policy = SplitPolicy::ByEvent {
            test_events: vec!["harvey".into(), "florence".into()],
        };
        let s = split_dataset(&m, &policy).unwrap();
        assert_eq!(s.split(Split::Test).count(), 216);
        assert!(s.split(Split::Test).all(|r| matches!(r.event, Event::Harvey | Event::Florence)));
    }

    #[test]
    fn by_event_unknown_name_errors() {
        let policy = SplitPolicy::ByEvent {
            test_events: vec!["katrina".into()],
        };
        assert!(matches!(split_dataset(&paper_like_manifest(), &policy), Err(Error::UnknownEvent(_))));
    }

    #[test]
    fn random_split_properties() {
        let m = paper_like_manifest();
        let zero = split_dataset(&m, &SplitPolicy::Random { seed: 0, test_frac: 0.0 }).unwrap();
        assert_eq!(zero.split(Split::Test).count(), 0);

        let p = SplitPolicy::Random { seed: 7, test_frac: 0.2 };
        let a = split_dataset(&m, &p).unwrap();
        let b = split_dataset(&m, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.split(Split::Test).count(), (m.len() as f64 * 0.2).round() as usize);
        assert_eq!(a.split(Split::Test).count() + a.split(Split::Train).count(), m.len());

        let mut reversed = m.clone();
        reversed.records.reverse();
        let c = split_dataset(&reversed, &p).unwrap();
        for r in &a.records {
            assert_eq!(c.get(&r.tile_id).unwrap().split, r.split);
        }
        assert!(split_dataset(&m, &SplitPolicy::Random { seed: 0, test_frac: 1.5 }).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "by-event:harvey,florence".parse::<SplitPolicy>().unwrap(),
            SplitPolicy::ByEvent {
                test_events: vec!["harvey".into(), "florence".into()]
            }
        );
        assert_eq!(
            "random:3:0.25".parse::<SplitPolicy>().unwrap(),
            SplitPolicy::Random { seed: 3, test_frac: 0.25 }
        );
        assert!("nope".parse::<SplitPolicy>().is_err());
    }

    fn write_triple(root: &Path, id: &str, with_post: bool) {
        let img = ImageTile::filled(id, 8, 8, [0.1, 0.2, 0.3]).unwrap();
        write_image(&root.join("pre").join(format!("{id}.png")), &img).unwrap();
        write_mask(&root.join("mask").join(format!("{id}.png")), &BinaryMask::zeros(8, 8)).unwrap();
        if with_post {
            write_image(&root.join("post").join(format!("{id}.png")), &img).unwrap();
        }
    }

    #[test]
    fn build_reports_incomplete_triples() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for id in ["harvey_a", "harvey_b", "florence_c"] {
            write_triple(root, id, true);
        }
        write_triple(root, "harvey_d", false);
        let built = build_manifest(
            &root.join("pre"),
            &root.join("mask"),
            &root.join("post"),
            "t",
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(built.manifest.len(), 3);
        assert_eq!(
            built.incomplete,
            vec![IncompleteTriple {
                tile_id: "harvey_d".into(),
                missing: vec!["post"]
            }]
        );
        assert_eq!(built.manifest.get("florence_c").unwrap().event, Event::Florence);

        let path = root.join("m.jsonl");
        built.manifest.write(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back.records, built.manifest.records);
    }

    #[test]
    fn build_empty_dirs_errors() {
        let dir = tempfile::tempdir().unwrap();
        for d in ["pre", "mask", "post"] {
            fs::create_dir_all(dir.path().join(d)).unwrap();
        }
        let r = build_manifest(
            &dir.path().join("pre"),
            &dir.path().join("mask"),
            &dir.path().join("post"),
            "t",
            &BuildOptions::default(),
        );
        assert!(matches!(r, Err(Error::NoTriples)));
    }

    #[test]
    fn build_duplicate_stem_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_triple(dir.path(), "x", true);
        fs::copy(dir.path().join("pre/x.png"), dir.path().join("pre/x.tif")).unwrap();
        let r = build_manifest(
            &dir.path().join("pre"),
            &dir.path().join("mask"),
            &dir.path().join("post"),
            "t",
            &BuildOptions::default(),
        );
        assert!(matches!(r, Err(Error::DuplicateTile(id)) if id == "x"));
    }
}
