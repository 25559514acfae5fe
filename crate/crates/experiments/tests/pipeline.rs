use std::path::Path;

use floodviz_core::baselines::{handcrafted_composite, ColorMatchSegmenter, FLOOD_BROWN};
use floodviz_core::manifest::{Manifest, Split};
use floodviz_core::metrics::{aggregate, iou, MaskResolution};
use floodviz_core::masks::reject_trivial_pair;
use floodviz_experiments::config::{EvalConfig, ModelKind, Preset, RunConfig};
use floodviz_experiments::data::{load_split, Sample};
use floodviz_experiments::evaluate::{evaluate, OverlayModel};
use floodviz_experiments::synthetic::{make_synthetic_dataset, SyntheticOptions};
use floodviz_experiments::train::{l1_to_target, load_generator, read_history, train, TrainOptions};
use floodviz_models::generator::Generator;
use floodviz_models::lpips::Lpips;

fn all_samples(m: &Manifest) -> Vec<Sample> {
    m.records.iter().map(|r| Sample::load(r).unwrap()).collect()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["pre", "mask", "post"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest".into(), std::fs::read(dir.join("manifest.jsonl")).unwrap()));
    out
}

#[test]
fn synthetic_dataset_is_reproducible_and_oracle_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let opts = SyntheticOptions::new(16, 256, 11);
    let m = make_synthetic_dataset(&opts, &a).unwrap();
    make_synthetic_dataset(&opts, &b).unwrap();
    let strip = |fs: Vec<(String, Vec<u8>)>, root: &Path| -> Vec<(String, Vec<u8>)> {
        let root = root.display().to_string();
        fs.into_iter().map(|(n, d)| (n.replace(&root, ""), d)).collect()
    };
    assert_eq!(strip(files(&a), &a), strip(files(&b), &b));

    assert_eq!(m.len(), 16);
    assert_eq!(m.split(Split::Test).count(), 4);
    let oracle = ColorMatchSegmenter::exact(FLOOD_BROWN);
    for s in all_samples(&Manifest::read(&a.join("manifest.jsonl")).unwrap()) {
        assert!(!reject_trivial_pair(&s.mask));
        assert_eq!(iou(&oracle.segment(&s.post), &s.mask).unwrap(), 1.0);
    }
}

#[test]
fn handcrafted_evaluation_is_self_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let m = make_synthetic_dataset(&SyntheticOptions::new(8, 64, 2), tmp.path()).unwrap();
    let test = load_split(&m, Split::Test).unwrap();
    let seg = ColorMatchSegmenter::exact(FLOOD_BROWN);
    let lp = Lpips::random_init(0, &candle_core::Device::Cpu).unwrap();
    let model = OverlayModel::new("handcrafted", FLOOD_BROWN);
    let cfg = EvalConfig {
        mask_resolutions: vec![MaskResolution::High],
        ..EvalConfig::default()
    };
    let report = evaluate(&[&model], &test, Some(&seg), &lp, &cfg).unwrap();
    assert_eq!(report.records.len(), test.len());
    for (r, s) in report.records.iter().zip(&test) {
        assert_eq!(r.lpips, 0.0);
        let composite = handcrafted_composite(&s.pre, &s.mask, FLOOD_BROWN).unwrap();
        assert_eq!(r.iou, iou(&seg.segment(&composite), &s.mask).unwrap());
    }
    assert_eq!(report.summaries, vec![aggregate(&report.records).unwrap()]);
}

#[test]
fn low_resolution_never_helps_the_handcrafted_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let m = make_synthetic_dataset(&SyntheticOptions::new(100, 64, 3), tmp.path()).unwrap();
    let samples = all_samples(&m);
    let seg = ColorMatchSegmenter::exact(FLOOD_BROWN);
    let lp = Lpips::random_init(0, &candle_core::Device::Cpu).unwrap();
    let model = OverlayModel::new("handcrafted", FLOOD_BROWN);
    let report = evaluate(&[&model], &samples, Some(&seg), &lp, &EvalConfig::default()).unwrap();
    assert_eq!(report.records.len(), 200);
    let mean = |res| {
        let rs: Vec<_> = report.records.iter().filter(|r| r.mask_resolution == res).cloned().collect();
        aggregate(&rs).unwrap()
    };
    let (high, low) = (mean(MaskResolution::High), mean(MaskResolution::Low));
    assert!(low.mean_iou <= high.mean_iou, "{} > {}", low.mean_iou, high.mean_iou);
    for s in &report.summaries {
        let rs: Vec<_> = report
            .records
            .iter()
            .filter(|r| r.mask_resolution == s.mask_resolution)
            .cloned()
            .collect();
        assert_eq!(*s, aggregate(&rs).unwrap());
    }
}

#[test]
fn overfit_run_is_finite_and_fits_the_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let m = make_synthetic_dataset(
        &SyntheticOptions {
            test_frac: 0.0,
            ..SyntheticOptions::new(16, 64, 4)
        },
        &data,
    )
    .unwrap();
    let samples = load_split(&m, Split::Train).unwrap();
    let cfg = RunConfig::new(data.join("manifest.jsonl"), ModelKind::GanPhysics, Preset::Desk64, 30, 9);
    let before = l1_to_target(
        &Generator::new(cfg.generator_config(), candle_core::DType::F32, &candle_core::Device::Cpu, cfg.seed)
            .unwrap(),
        &samples,
    )
    .unwrap();
    let run = tmp.path().join("run");
    let out = train(&cfg, &run, &TrainOptions::default()).unwrap();
    assert_eq!(out.history.len(), 30);
    for h in &out.history {
        for v in [h.d_loss, h.g_loss, h.g_adv, h.g_feature_matching, h.g_l1] {
            assert!(v.is_finite(), "epoch {}: {h:?}", h.epoch);
        }
    }
    let (g, kind) = load_generator(&out.checkpoint).unwrap();
    assert_eq!(kind, ModelKind::GanPhysics);
    let after = l1_to_target(&g, &samples).unwrap();
    println!("L1 to target: {before:.4} -> {after:.4}");
    assert!(after <= 0.4 * before, "{before} -> {after}");
    for e in [10, 20, 30] {
        assert!(run.join(format!("checkpoints/epoch_{e:04}.safetensors")).is_file());
    }
    assert!(run.join("config.toml").is_file() && run.join("VERSION").is_file());
    assert_eq!(read_history(&run.join("history.json")).unwrap(), out.history);
}

#[test]
fn resume_reproduces_the_next_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_synthetic_dataset(&SyntheticOptions::new(10, 64, 5), &data).unwrap();
    let mut cfg = RunConfig::new(data.join("manifest.jsonl"), ModelKind::GanNoPhysics, Preset::Desk64, 3, 1);
    cfg.train.checkpoint_every = 1;
    cfg.train.spectral_norm = true;
    cfg.train.decay_start_epoch = 1;
    let full = train(&cfg, &tmp.path().join("full"), &TrainOptions::default()).unwrap();

    let resumed_dir = tmp.path().join("resumed");
    let opts = TrainOptions {
        resume: Some(tmp.path().join("full/checkpoints/epoch_0001.safetensors")),
        force: false,
    };
    let resumed = train(&cfg, &resumed_dir, &opts).unwrap();
    assert_eq!(resumed.history.len(), 2);
    for (a, b) in full.history[1..].iter().zip(&resumed.history) {
        assert_eq!(a.epoch, b.epoch);
        for (x, y) in [(a.d_loss, b.d_loss), (a.g_loss, b.g_loss), (a.g_l1, b.g_l1)] {
            assert!((x - y).abs() <= 1e-5, "epoch {}: {x} vs {y}", a.epoch);
        }
    }

    let mut other = cfg.clone();
    other.train.adam.lr = 1e-3;
    assert!(train(&other, &tmp.path().join("other"), &opts).is_err());
    let forced = TrainOptions { force: true, ..opts };
    assert!(train(&other, &tmp.path().join("other"), &forced).is_ok());
}

#[test]
fn empty_train_split_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_synthetic_dataset(
        &SyntheticOptions {
            test_frac: 1.0,
            ..SyntheticOptions::new(2, 64, 5)
        },
        &data,
    )
    .unwrap();
    let cfg = RunConfig::new(data.join("manifest.jsonl"), ModelKind::GanPhysics, Preset::Desk64, 1, 0);
    let err = train(&cfg, &tmp.path().join("run"), &TrainOptions::default()).unwrap_err();
    assert!(err.to_string().contains("train split"), "{err}");
}
