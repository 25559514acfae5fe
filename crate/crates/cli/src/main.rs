use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use floodviz_core::baselines::OverlayColor;
use floodviz_core::io::{read_image, write_image};
use floodviz_core::manifest::{Manifest, Split, SplitPolicy};
use floodviz_core::metrics::MaskResolution;
use floodviz_core::Event;
use floodviz_experiments::config::{
    EvalConfig, ModelKind, PerceptualSource, Preset, RunConfig, SegmenterSource,
};
use floodviz_experiments::data::load_split;
use floodviz_experiments::evaluate::{generate_to_dir, load_model, run_evaluation, EvalRun, ModelSpec, OverlayModel};
use floodviz_experiments::grid::{render_grid, select_tiles, DEFAULT_GRID_COLS};
use floodviz_experiments::prepare::{prepare_data, PrepareOptions};
use floodviz_experiments::segment::{pair_labels, train_segmenter_cv};
use floodviz_experiments::synthetic::{make_synthetic_dataset, SyntheticOptions};
use floodviz_experiments::train::{train, TrainOptions};
use floodviz_models::segmenter::SegmenterConfig;
use floodviz_service::ServeArgs;

#[derive(Parser)]
#[command(name = "floodviz", version, about = "Physics-conditioned flood imagery: data, training, evaluation, serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair pre/mask/post rasters by stem, tile scenes and write a manifest.
    PrepareData(PrepareArgs),
    /// Write a procedural dataset whose masks an exact color match recovers.
    MakeSynthetic(SyntheticArgs),
    /// Train a GAN.
    Train(TrainArgs),
    /// Cross-validate a flood segmenter on hand labels.
    TrainSegmenter(SegmenterArgs),
    /// Score models on the test split.
    Evaluate(EvaluateArgs),
    /// Write generated post-event tiles for a manifest.
    Generate(GenerateArgs),
    /// Lay PNG tiles out in a grid.
    RenderGrid(GridArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    post: PathBuf,
    /// Manifest to write; tiles cut from larger scenes go to `tiles/` beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    tile_px: usize,
    #[arg(long, default_value_t = 0)]
    overlap_px: usize,
    /// Ground sample distance of the imagery, meters per pixel.
    #[arg(long, default_value_t = 0.5)]
    gsd: f64,
    /// GSD the low-resolution evaluation pools masks to.
    #[arg(long, default_value_t = 30.0)]
    coarse_gsd: f64,
    /// `by-event:harvey,florence` or `random:SEED:FRAC`.
    #[arg(long)]
    split: Option<SplitPolicy>,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 48)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (TOML). Flags below fill in a fresh config when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "gan_physics")]
    model: ModelKind,
    #[arg(long, default_value = "desk_64")]
    preset: Preset,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Resume even when the checkpoint was written under another config.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SegmenterArgs {
    /// Label masks, paired with images by file stem.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 4)]
    cv: usize,
    #[arg(long, default_value_t = 23)]
    holdout: usize,
    /// Segmenter config (TOML); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    gsd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `tag` for baselines, `tag=CHECKPOINT` for GANs. Repeatable.
    #[arg(long = "model", required = true)]
    models: Vec<ModelSpec>,
    /// Segmenter checkpoint; the flood-brown color match otherwise.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    /// Perceptual backbone weights, or `random:SEED` for the uncalibrated stand-in.
    #[arg(long, default_value = "random:0")]
    perceptual: PerceptualSource,
    #[arg(long, value_delimiter = ',', default_value = "high,low")]
    resolutions: Vec<String>,
    #[arg(long, default_value_t = 30.0)]
    coarse_gsd: f64,
    #[arg(long, default_value_t = 64)]
    grid_tiles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: ModelKind,
    /// Overlay color for the baselines, `#RRGGBB`.
    #[arg(long)]
    color: Option<OverlayColor>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// `train`, `test` or `all`.
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Directory of equally sized PNG tiles.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_COLS)]
    cols: usize,
    /// Tiles to sample; 0 takes all.
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    let level = std::env::var("FLOODVIZ_LOG")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(tracing::Level::INFO);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::PrepareData(a) => prepare(a),
        Command::MakeSynthetic(a) => synthetic(a),
        Command::Train(a) => train_cmd(a),
        Command::TrainSegmenter(a) => segmenter(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Generate(a) => generate(a),
        Command::RenderGrid(a) => grid(a),
        Command::Serve(a) => serve(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let s = prepare_data(&PrepareOptions {
        pre_dir: a.pre,
        mask_dir: a.mask,
        post_dir: a.post,
        out: a.out.clone(),
        tile_px: a.tile_px,
        overlap_px: a.overlap_px,
        gsd_m_per_px: a.gsd,
        coarse_gsd: a.coarse_gsd,
        split: a.split,
    })?;
    for id in &s.incomplete {
        eprintln!("incomplete triple skipped: {id}");
    }
    println!(
        "{}: {} tiles ({} train, {} test), {} trivial dropped, {} incomplete",
        a.out.display(),
        s.manifest.len(),
        s.manifest.split(Split::Train).count(),
        s.manifest.split(Split::Test).count(),
        s.rejected_trivial,
        s.incomplete.len()
    );
    Ok(())
}

fn synthetic(a: SyntheticArgs) -> Result<()> {
    let opts = SyntheticOptions {
        test_frac: a.test_frac,
        ..SyntheticOptions::new(a.n, a.size, a.seed)
    };
    let m = make_synthetic_dataset(&opts, &a.out)?;
    println!("{}: {} triplets", a.out.join("manifest.jsonl").display(), m.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = match (&a.config, &a.manifest) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(m)) => RunConfig::new(m.clone(), a.model, a.preset, a.epochs, a.seed),
        (None, None) => bail!("pass --config or --manifest"),
    };
    let out = train(
        &cfg,
        &a.out,
        &TrainOptions {
            resume: a.resume,
            force: a.force,
        },
    )?;
    if let Some(last) = out.history.last() {
        println!(
            "epoch {}: d {:.4}  g {:.4} (adv {:.4}, fm {:.4}, l1 {:.4})",
            last.epoch, last.d_loss, last.g_loss, last.g_adv, last.g_feature_matching, last.g_l1
        );
    }
    println!("{}", out.checkpoint.display());
    Ok(())
}

fn segmenter(a: SegmenterArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            toml::from_str::<SegmenterConfig>(&text).with_context(|| p.display().to_string())?
        }
        None => SegmenterConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let labeled = pair_labels(&a.images, &a.labels, a.gsd)?;
    let (run, _) = train_segmenter_cv(&labeled, a.cv, a.holdout, &cfg, a.seed, &a.out)?;
    let cv = &run.cross_validation;
    println!(
        "{} labels: holdout {}, {} folds; fold IoU {:?}, best fold {} (holdout IoU {:.4})",
        run.n_labeled, run.holdout, run.k, cv.fold_iou, cv.best_fold, cv.holdout_iou
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let mask_resolutions = a
        .resolutions
        .iter()
        .map(|r| match r.as_str() {
            "high" => Ok(MaskResolution::High),
            "low" => Ok(MaskResolution::Low),
            other => bail!("unknown mask resolution `{other}`: expected high or low"),
        })
        .collect::<Result<Vec<_>>>()?;
    let segmenter = match a.segmenter {
        Some(path) => SegmenterSource::Checkpoint { path },
        None => SegmenterSource::default(),
    };
    let run = EvalRun {
        dataset: a.manifest,
        seed: a.seed,
        models: a.models,
        eval: EvalConfig {
            mask_resolutions,
            coarse_gsd: a.coarse_gsd,
            perceptual: a.perceptual,
            segmenter,
            grid_tiles: a.grid_tiles,
            ..EvalConfig::default()
        },
    };
    let out = run_evaluation(&run, &a.out)?;
    println!("{}", out.table);
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let samples = match a.split.as_str() {
        "all" => manifest
            .records
            .iter()
            .map(floodviz_experiments::data::Sample::load)
            .collect::<floodviz_experiments::Result<Vec<_>>>()?,
        "train" => load_split(&manifest, Split::Train)?,
        "test" => load_split(&manifest, Split::Test)?,
        other => bail!("unknown split `{other}`: expected train, test or all"),
    };
    let model = match (a.color, a.model.overlay_color()) {
        (Some(color), Some(_)) => Box::new(OverlayModel::new(a.model.tag(), color)),
        (Some(_), None) => bail!("--color applies to the overlay baselines only"),
        (None, _) => load_model(a.model, a.checkpoint.as_deref())?,
    };
    let written = generate_to_dir(model.as_ref(), &samples, &a.out)?;
    println!("{} tiles written to {}", written.len(), a.out.display());
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn grid(a: GridArgs) -> Result<()> {
    let files = png_files(&a.input)?;
    if files.is_empty() {
        bail!("no PNG tiles in {}", a.input.display());
    }
    let k = if a.count == 0 { files.len() } else { a.count };
    let images = select_tiles(files.len(), k, a.seed)
        .into_iter()
        .map(|i| read_image(&files[i], 1.0, Event::Synthetic))
        .collect::<floodviz_core::Result<Vec<_>>>()?;
    write_image(&a.out, &render_grid(&images, a.cols)?)?;
    println!("{}: {} tiles", a.out.display(), images.len());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(floodviz_service::serve(a))?;
    Ok(())
}
