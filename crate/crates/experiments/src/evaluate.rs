//! Scoring generated imagery against ground truth at native and degraded
//! mask resolution.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::Device;
use floodviz_core::baselines::{handcrafted_composite, ColorMatchSegmenter, OverlayColor};
use floodviz_core::io::write_image;
use floodviz_core::manifest::{Manifest, Split};
use floodviz_core::masks::degrade_mask;
use floodviz_core::metrics::{Evaluator, MaskPredictor, MaskResolution, MetricRecord, PerceptualMetric};
use floodviz_core::report::MetricReport;
use floodviz_core::{BinaryMask, ImageTile};
use floodviz_models::generator::Generator;
use floodviz_models::lpips::Lpips;
use floodviz_models::segmenter::Segmenter;

use serde::{Deserialize, Serialize};

use crate::config::{version_string, EvalConfig, ModelKind, PerceptualSource, SegmenterSource};
use crate::data::{load_split, Sample};
use crate::error::{Error, Result};
use crate::grid::{select_tiles, write_grid};
use crate::train::load_generator;

/// Anything that turns a pre-event tile and a flood mask into a post-event
/// tile.
pub trait ImageModel: Send + Sync {
    fn tag(&self) -> &str;
    fn generate(&self, pre: &ImageTile, mask: &BinaryMask) -> Result<ImageTile>;
}

pub struct GanModel {
    tag: String,
    generator: Generator,
}

impl GanModel {
    pub fn new(tag: impl Into<String>, generator: Generator) -> Self {
        Self {
            tag: tag.into(),
            generator,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (generator, kind) = load_generator(path)?;
        Ok(Self::new(kind.tag(), generator))
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }
}

impl ImageModel for GanModel {
    fn tag(&self) -> &str {
        &self.tag
    }

    /// The unconditioned generator ignores the mask.
    fn generate(&self, pre: &ImageTile, mask: &BinaryMask) -> Result<ImageTile> {
        let mask = self.generator.config().conditioned().then_some(mask);
        Ok(self.generator.generate(pre, mask)?)
    }
}

/// Flat-color overlay baseline.
pub struct OverlayModel {
    tag: String,
    color: OverlayColor,
}

impl OverlayModel {
    pub fn new(tag: impl Into<String>, color: OverlayColor) -> Self {
        Self {
            tag: tag.into(),
            color,
        }
    }

    pub fn color(&self) -> OverlayColor {
        self.color
    }
}

impl ImageModel for OverlayModel {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn generate(&self, pre: &ImageTile, mask: &BinaryMask) -> Result<ImageTile> {
        Ok(handcrafted_composite(pre, mask, self.color)?)
    }
}

/// Baselines need no checkpoint; GAN kinds do.
pub fn load_model(kind: ModelKind, checkpoint: Option<&Path>) -> Result<Box<dyn ImageModel>> {
    if let Some(color) = kind.overlay_color() {
        return Ok(Box::new(OverlayModel::new(kind.tag(), color)));
    }
    let path = checkpoint.ok_or_else(|| Error::Config(format!("model `{kind}` needs a checkpoint")))?;
    let model = GanModel::load(path)?;
    if model.tag() != kind.tag() {
        return Err(Error::Config(format!(
            "{} holds a `{}` generator, not `{kind}`",
            path.display(),
            model.tag()
        )));
    }
    Ok(Box::new(model))
}

pub fn build_segmenter(src: &SegmenterSource) -> Result<Box<dyn MaskPredictor>> {
    match src {
        SegmenterSource::ColorMatch { color, tolerance } => Ok(Box::new(ColorMatchSegmenter {
            color: *color,
            tolerance: *tolerance,
        })),
        SegmenterSource::Checkpoint { path } => {
            if !path.is_file() {
                return Err(Error::MissingSegmenter);
            }
            Ok(Box::new(Segmenter::load(path, &Device::Cpu)?))
        }
    }
}

pub fn build_perceptual(src: &PerceptualSource) -> Result<Lpips> {
    let m = match src {
        PerceptualSource::Weights(path) => Lpips::load(path, &Device::Cpu)?,
        PerceptualSource::Random(seed) => {
            tracing::warn!(seed, "using the uncalibrated random perceptual backbone");
            Lpips::random_init(*seed, &Device::Cpu)?
        }
    };
    Ok(m)
}

/// The mask fed to the model and used as IoU reference. Low resolution
/// majority-pools to `coarse_gsd` and replicates back to the tile grid;
/// masks already that coarse pass through.
pub fn eval_mask(mask: &BinaryMask, resolution: MaskResolution, coarse_gsd: f64) -> Result<BinaryMask> {
    match resolution {
        MaskResolution::High => Ok(mask.clone()),
        MaskResolution::Low if mask.gsd_m_per_px * 2.0 > coarse_gsd => Ok(mask.clone()),
        MaskResolution::Low => Ok(degrade_mask(mask, coarse_gsd)?),
    }
}

/// One record per `(resolution, sample)`, resolutions in config order.
pub fn evaluate_model(
    model: &dyn ImageModel,
    samples: &[Sample],
    evaluator: &Evaluator<'_>,
    cfg: &EvalConfig,
) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::with_capacity(samples.len() * cfg.mask_resolutions.len());
    for &res in &cfg.mask_resolutions {
        for s in samples {
            let mask = eval_mask(&s.mask, res, cfg.coarse_gsd)?;
            let mut gen = model.generate(&s.pre, &mask)?;
            gen.tile_id = s.tile_id.clone();
            out.push(evaluator.evaluate_image(&gen, &s.post, &mask, model.tag(), res)?);
        }
    }
    Ok(out)
}

/// Scores every model on the same test samples.
pub fn evaluate(
    models: &[&dyn ImageModel],
    test: &[Sample],
    segmenter: Option<&dyn MaskPredictor>,
    perceptual: &dyn PerceptualMetric,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let segmenter = segmenter.ok_or(Error::MissingSegmenter)?;
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let evaluator = Evaluator::new(segmenter, perceptual);
    let mut records = Vec::new();
    for m in models {
        records.extend(evaluate_model(*m, test, &evaluator, cfg)?);
    }
    Ok(MetricReport::from_records(records)?)
}

/// Report files plus one sample grid per model.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub report: MetricReport,
    pub table: String,
    pub grids: Vec<PathBuf>,
}

/// Writes the report and, for each model, a grid of up to
/// `cfg.grid_tiles` seeded-random test tiles generated with native masks.
pub fn write_eval_outputs(
    report: MetricReport,
    models: &[&dyn ImageModel],
    test: &[Sample],
    cfg: &EvalConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<EvalReport> {
    report.write(out_dir)?;
    let pick = select_tiles(test.len(), cfg.grid_tiles, seed);
    let mut grids = Vec::new();
    for m in models {
        let images = pick
            .iter()
            .map(|&i| m.generate(&test[i].pre, &test[i].mask))
            .collect::<Result<Vec<_>>>()?;
        if images.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("grid_{}.png", m.tag()));
        write_grid(&path, &images, cfg.grid_cols)?;
        grids.push(path);
    }
    Ok(EvalReport {
        table: report.render_table(),
        report,
        grids,
    })
}

/// A model to evaluate, written `tag` or `tag=checkpoint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (tag, ck) = match s.split_once('=') {
            Some((t, p)) => (t, Some(PathBuf::from(p))),
            None => (s, None),
        };
        Ok(Self {
            kind: tag.parse()?,
            checkpoint: ck,
        })
    }
}

/// Everything an evaluation run depends on; frozen into its output dir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub dataset: PathBuf,
    pub seed: u64,
    pub models: Vec<ModelSpec>,
    pub eval: EvalConfig,
}

/// Evaluates every model on the test split of `run.dataset` and writes the
/// report, grids, `eval.toml` and `VERSION` into `out_dir`.
pub fn run_evaluation(run: &EvalRun, out_dir: &Path) -> Result<EvalReport> {
    let manifest = Manifest::read(&run.dataset)?;
    let test = load_split(&manifest, Split::Test)?;
    let models = run
        .models
        .iter()
        .map(|m| load_model(m.kind, m.checkpoint.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn ImageModel> = models.iter().map(|m| m.as_ref()).collect();
    let segmenter = build_segmenter(&run.eval.segmenter)?;
    let perceptual = build_perceptual(&run.eval.perceptual)?;
    let report = evaluate(&refs, &test, Some(segmenter.as_ref()), &perceptual, &run.eval)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let frozen = toml::to_string(run).map_err(|e| Error::Config(e.to_string()))?;
    let path = out_dir.join("eval.toml");
    std::fs::write(&path, frozen).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join("VERSION");
    std::fs::write(&path, format!("{}\n", version_string())).map_err(|e| Error::io(&path, e))?;
    write_eval_outputs(report, &refs, &test, &run.eval, run.seed, out_dir)
}

/// Writes `<tile_id>.png` for every sample.
pub fn generate_to_dir(model: &dyn ImageModel, samples: &[Sample], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let mut img = model.generate(&s.pre, &s.mask)?;
        img.tile_id = s.tile_id.clone();
        let path = out_dir.join(format!("{}.png", s.tile_id));
        write_image(&path, &img)?;
        out.push(path);
    }
    Ok(out)
}
