use floodviz_core::metrics::iou;
use floodviz_core::{BinaryMask, Event, ImageTile};
use floodviz_models::segmenter::{train_segmenter, SegmenterConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Green noisy background with a brown disc marking the flood.
fn example(seed: u64, n: usize) -> (ImageTile, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cy, cx) = (
        rng.random_range(16..n - 16) as f64,
        rng.random_range(16..n - 16) as f64,
    );
    let r = rng.random_range(8.0..14.0);
    let mask = BinaryMask::from_fn(n, n, |y, x| {
        ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() < r
    });
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let base: [i32; 3] = if mask.get(y, x) == 1 {
                [153, 141, 111]
            } else {
                [60, 110, 50]
            };
            for b in base {
                data.push((b + rng.random_range(-20..=20)).clamp(0, 255) as u8);
            }
        }
    }
    (
        ImageTile::from_rgb8(format!("s{seed}"), n, n, &data, 0.5, Event::Synthetic).unwrap(),
        mask,
    )
}

#[test]
fn overfits_four_images() {
    let set: Vec<_> = (0..4).map(|s| example(s, 64)).collect();
    let cfg = SegmenterConfig {
        steps: 200,
        ..SegmenterConfig::default()
    };
    let (seg, hist) = train_segmenter(&set, &cfg, 11).unwrap();
    let first = hist.supervised[0];
    let last = hist.supervised[hist.supervised.len() - 5..]
        .iter()
        .sum::<f64>()
        / 5.0;
    assert!(last <= 0.5 * first, "supervised loss {first} -> {last}");
    for (img, mask) in &set {
        let score = iou(&seg.segment(img).unwrap(), mask).unwrap();
        assert!(score > 0.8, "train IoU {score}");
    }
    assert_eq!(hist.finetune.len(), cfg.finetune.steps);
}

#[test]
fn same_seed_same_losses() {
    let set: Vec<_> = (0..4).map(|s| example(s, 64)).collect();
    let cfg = SegmenterConfig {
        steps: 15,
        ..SegmenterConfig::default()
    };
    let (_, a) = train_segmenter(&set, &cfg, 5).unwrap();
    let (_, b) = train_segmenter(&set, &cfg, 5).unwrap();
    let (la, lb) = (a.finetune.last().unwrap(), b.finetune.last().unwrap());
    assert!((la - lb).abs() <= 1e-6, "{la} vs {lb}");
    assert_eq!(a, b);
}

#[test]
fn save_and_load_preserve_predictions() {
    let set: Vec<_> = (0..2).map(|s| example(s, 64)).collect();
    let cfg = SegmenterConfig {
        steps: 5,
        ..SegmenterConfig::default()
    };
    let (seg, _) = train_segmenter(&set, &cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.safetensors");
    seg.save(&path, "fp").unwrap();
    let back =
        floodviz_models::segmenter::Segmenter::load(&path, &candle_core::Device::Cpu).unwrap();
    assert_eq!(back.config(), seg.config());
    for (img, _) in &set {
        let a = seg
            .probabilities(img)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        let b = back
            .probabilities(img)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert_eq!(a, b);
    }
}
