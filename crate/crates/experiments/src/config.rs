//! Run configuration, read from TOML and frozen into every output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use floodviz_core::augment::AugmentConfig;
use floodviz_core::baselines::{GreenVariant, OverlayColor, FLOOD_BROWN};
use floodviz_core::metrics::MaskResolution;
use floodviz_models::discriminator::{apply_spectral_norm, DiscriminatorConfig};
use floodviz_models::generator::GeneratorConfig;
use floodviz_models::losses::LossConfig;
use floodviz_models::optim::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GanPhysics,
    GanNoPhysics,
    Handcrafted,
    GreenMaskDark,
    GreenMaskLight,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::GanPhysics,
        ModelKind::GanNoPhysics,
        ModelKind::Handcrafted,
        ModelKind::GreenMaskDark,
        ModelKind::GreenMaskLight,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::GanPhysics => "gan_physics",
            ModelKind::GanNoPhysics => "gan_no_physics",
            ModelKind::Handcrafted => "handcrafted",
            ModelKind::GreenMaskDark => "green_mask_dark",
            ModelKind::GreenMaskLight => "green_mask_light",
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, ModelKind::GanPhysics | ModelKind::GanNoPhysics)
    }

    /// The overlay a baseline paints; `None` for the GANs.
    pub fn overlay_color(self) -> Option<OverlayColor> {
        match self {
            ModelKind::Handcrafted => Some(FLOOD_BROWN),
            ModelKind::GreenMaskDark => Some(GreenVariant::Dark.color()),
            ModelKind::GreenMaskLight => Some(GreenVariant::Light.color()),
            ModelKind::GanPhysics | ModelKind::GanNoPhysics => None,
        }
    }

    /// Whether the model consumes the mask (GAN input channel or overlay).
    pub fn conditioned(self) -> bool {
        self != ModelKind::GanNoPhysics
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper1024,
    Desk256,
    Desk64,
}

impl Preset {
    pub fn tile_px(self) -> usize {
        match self {
            Preset::Paper1024 => 1024,
            Preset::Desk256 => 256,
            Preset::Desk64 => 64,
        }
    }

    pub fn generator(self, conditioned: bool) -> GeneratorConfig {
        match self {
            Preset::Paper1024 => GeneratorConfig::paper(conditioned),
            Preset::Desk256 | Preset::Desk64 => GeneratorConfig::desk(conditioned),
        }
    }

    pub fn discriminator(self, conditioned: bool) -> DiscriminatorConfig {
        match self {
            Preset::Paper1024 => DiscriminatorConfig::paper(conditioned),
            Preset::Desk256 | Preset::Desk64 => DiscriminatorConfig::desk(conditioned),
        }
    }

    /// Desk presets add a pixel L1 term so short runs converge.
    pub fn loss(self) -> LossConfig {
        match self {
            Preset::Paper1024 => LossConfig::default(),
            Preset::Desk256 | Preset::Desk64 => LossConfig {
                l1_weight: 10.0,
                ..LossConfig::default()
            },
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Preset::Paper1024 => 1,
            Preset::Desk256 => 2,
            Preset::Desk64 => 4,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_1024" => Ok(Preset::Paper1024),
            "desk_256" => Ok(Preset::Desk256),
            "desk_64" => Ok(Preset::Desk64),
            _ => Err(Error::Config(format!("unknown preset `{s}`: expected paper_1024|desk_256|desk_64"))),
        }
    }
}

/// Where the perceptual backbone comes from: a safetensors file, or the
/// seeded uncalibrated stand-in written `random:<seed>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PerceptualSource {
    Weights(PathBuf),
    Random(u64),
}

impl FromStr for PerceptualSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("random:") {
            Some(seed) => seed
                .parse()
                .map(PerceptualSource::Random)
                .map_err(|_| Error::Config(format!("perceptual source `{s}`: bad seed"))),
            None => Ok(PerceptualSource::Weights(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for PerceptualSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerceptualSource::Weights(p) => write!(f, "{}", p.display()),
            PerceptualSource::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

impl Serialize for PerceptualSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PerceptualSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Mask source used to score generated images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterSource {
    /// Per-channel color match against an overlay color.
    ColorMatch { color: OverlayColor, tolerance: f32 },
    /// A trained segmenter checkpoint.
    Checkpoint { path: PathBuf },
}

impl Default for SegmenterSource {
    fn default() -> Self {
        SegmenterSource::ColorMatch {
            color: FLOOD_BROWN,
            tolerance: DEFAULT_COLOR_TOLERANCE,
        }
    }
}

/// Per-channel tolerance of the color-match oracle when it scores GAN output,
/// which never reproduces the overlay color bit-exactly.
pub const DEFAULT_COLOR_TOLERANCE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub mask_resolutions: Vec<MaskResolution>,
    pub coarse_gsd: f64,
    pub perceptual: PerceptualSource,
    pub segmenter: SegmenterSource,
    pub grid_tiles: usize,
    pub grid_cols: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mask_resolutions: vec![MaskResolution::High, MaskResolution::Low],
            coarse_gsd: 30.0,
            perceptual: PerceptualSource::Random(0),
            segmenter: SegmenterSource::default(),
            grid_tiles: 64,
            grid_cols: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Epoch from which the learning rate decays linearly toward zero.
    pub decay_start_epoch: usize,
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub spectral_norm: bool,
}

impl TrainConfig {
    pub fn for_preset(preset: Preset, epochs: usize) -> Self {
        Self {
            batch_size: preset.batch_size(),
            adam: AdamConfig::default(),
            decay_start_epoch: epochs / 2,
            checkpoint_every: 10,
            loss: preset.loss(),
            spectral_norm: false,
        }
    }

    /// Learning rate for 0-based `epoch` out of `epochs`.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        let lr = self.adam.lr;
        if epoch < self.decay_start_epoch || epochs <= self.decay_start_epoch {
            return lr;
        }
        lr * (epochs - epoch) as f64 / (epochs - self.decay_start_epoch) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub model: ModelKind,
    pub preset: Preset,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains on the raw tiles.
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    pub train: TrainConfig,
    /// Optional architecture overrides of the preset.
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub discriminator: Option<DiscriminatorConfig>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, model: ModelKind, preset: Preset, epochs: usize, seed: u64) -> Self {
        Self {
            dataset: dataset.into(),
            model,
            preset,
            epochs,
            seed,
            augment: None,
            eval: EvalConfig::default(),
            train: TrainConfig::for_preset(preset, epochs),
            generator: None,
            discriminator: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `dataset` path is resolved against
    /// the config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.train.batch_size == 0 || self.train.checkpoint_every == 0 {
            return Err(Error::Config("batch_size and checkpoint_every must be positive".into()));
        }
        self.train.loss.validate()?;
        if self.model.is_trainable() {
            let g = self.generator_config();
            g.validate()?;
            self.discriminator_config().validate()?;
            if g.conditioned() != self.model.conditioned() {
                return Err(Error::Config(format!(
                    "model `{}` needs a generator with {} input channels",
                    self.model,
                    if self.model.conditioned() { 4 } else { 3 }
                )));
            }
        }
        if !(self.eval.coarse_gsd > 0.0) || self.eval.grid_cols == 0 {
            return Err(Error::Config("eval.coarse_gsd and eval.grid_cols must be positive".into()));
        }
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        self.generator
            .clone()
            .unwrap_or_else(|| self.preset.generator(self.model.conditioned()))
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        let d = self
            .discriminator
            .clone()
            .unwrap_or_else(|| self.preset.discriminator(self.model.conditioned()));
        if self.train.spectral_norm {
            apply_spectral_norm(&d)
        } else {
            d
        }
    }

    /// The overlay the baseline models paint, if any.
    pub fn baseline_color(&self) -> Option<OverlayColor> {
        self.model.overlay_color()
    }

    /// Writes `config.toml` and `VERSION` into `dir`.
    pub fn freeze(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, self.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        let v_path = dir.join("VERSION");
        std::fs::write(&v_path, format!("{}\n", version_string())).map_err(|e| Error::io(&v_path, e))
    }
}

/// Crate version plus `git describe` of the working directory when available.
pub fn version_string() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    let git = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match git {
        Some(g) => format!("floodviz {pkg} ({g})"),
        None => format!("floodviz {pkg}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let mut cfg = RunConfig::new("data/manifest.jsonl", ModelKind::GanPhysics, Preset::Desk64, 30, 7);
        cfg.augment = Some(AugmentConfig::flood());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::new("m", ModelKind::GanNoPhysics, Preset::Desk64, 0, 0);
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        assert!(cfg.validate().is_ok());
        cfg.generator = Some(GeneratorConfig::desk(true));
        assert!(cfg.validate().is_err());
        cfg.generator = None;
        cfg.train.loss.perceptual_weight = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lr_schedule_decays_linearly_in_second_half() {
        let t = TrainConfig::for_preset(Preset::Desk64, 10);
        assert_eq!(t.lr_at(0, 10), 2e-4);
        assert_eq!(t.lr_at(4, 10), 2e-4);
        assert_eq!(t.lr_at(5, 10), 2e-4);
        assert!((t.lr_at(9, 10) - 2e-4 / 5.0).abs() < 1e-18);
    }

    #[test]
    fn parse_enums() {
        assert_eq!("gan_physics".parse::<ModelKind>().unwrap(), ModelKind::GanPhysics);
        assert!("vaegan".parse::<ModelKind>().is_err());
        assert_eq!("desk_64".parse::<Preset>().unwrap(), Preset::Desk64);
        assert_eq!("random:3".parse::<PerceptualSource>().unwrap(), PerceptualSource::Random(3));
        assert_eq!(
            "w.safetensors".parse::<PerceptualSource>().unwrap(),
            PerceptualSource::Weights("w.safetensors".into())
        );
    }
}
