use std::collections::HashSet;

use floodviz_core::augment::{augment, AugmentConfig, CropAug, DownscaleAug, ElasticAug, HueAug, RotationAug};
use floodviz_core::baselines::{handcrafted_composite, FLOOD_BROWN};
use floodviz_core::manifest::{split_dataset, Manifest, Split, SplitPolicy, TripletRecord};
use floodviz_core::masks::{coarse_grain_by_block, coarse_grain_mask, upsample_mask};
use floodviz_core::metrics::{fvps, iou};
use floodviz_core::{BinaryMask, Event, ImageTile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random::<f64>() < density)
}

fn ones_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    let mut s = HashSet::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c) == 1 {
                s.insert((r, c));
            }
        }
    }
    s
}

fn oracle_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (sa, sb) = (ones_set(a), ones_set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[test]
fn iou_matches_set_oracle_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let d = [0.0, 0.02, 0.3, 0.5, 0.9, 1.0][i % 6];
        let a = random_mask(&mut rng, 32, 32, d);
        let db = rng.random();
        let b = random_mask(&mut rng, 32, 32, db);
        assert_eq!(iou(&a, &b).unwrap(), oracle_iou(&a, &b), "pair {i}");
    }
}

#[test]
fn fvps_grid_bounds_and_monotonicity() {
    let eps = 1e-6;
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for (i, &u) in grid.iter().enumerate() {
        for (j, &l) in grid.iter().enumerate() {
            let f = fvps(u, l, eps).unwrap();
            let (lo, hi) = (u.min(1.0 - l), u.max(1.0 - l));
            assert!(f >= lo - 2.0 * eps && f <= hi + 2.0 * eps, "({u}, {l}) -> {f}");
            if i > 0 {
                assert!(f >= fvps(grid[i - 1], l, eps).unwrap());
            }
            if j > 0 {
                assert!(f <= fvps(u, grid[j - 1], eps).unwrap());
            }
            assert!((f - fvps(1.0 - l, 1.0 - u, eps).unwrap()).abs() < 1e-12);
        }
    }
}

fn block_oracle(m: &BinaryMask, block: usize) -> Vec<Vec<u8>> {
    let (h, w) = m.dims();
    (0..h.div_ceil(block))
        .map(|br| {
            (0..w.div_ceil(block))
                .map(|bc| {
                    let cells: Vec<u8> = (br * block..((br + 1) * block).min(h))
                        .flat_map(|r| (bc * block..((bc + 1) * block).min(w)).map(move |c| (r, c)))
                        .map(|(r, c)| m.get(r, c))
                        .collect();
                    let ones = cells.iter().filter(|&&v| v == 1).count() as f64;
                    u8::from(ones / cells.len() as f64 >= 0.5)
                })
                .collect()
        })
        .collect()
}

#[test]
fn coarse_grain_matches_block_oracle_on_500_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..500 {
        let h = rng.random_range(1..40);
        let w = rng.random_range(1..40);
        let block = rng.random_range(2..7);
        let d = rng.random();
        let m = random_mask(&mut rng, h, w, d);
        let got = coarse_grain_by_block(&m, block);
        let want = block_oracle(&m, block);
        assert_eq!(got.height(), want.len(), "mask {i}");
        for (r, row) in want.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(got.get(r, c), v, "mask {i} block ({r},{c})");
            }
        }
    }
}

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..max, 1..max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..=1, h * w)
            .prop_map(move |v| BinaryMask::new(h, w, v, 30.0).unwrap())
    })
}

fn painted_triplet(mask: &BinaryMask) -> (ImageTile, ImageTile) {
    let (h, w) = mask.dims();
    let mut pre = ImageTile::filled("paint", h, w, [0.2, 0.6, 0.3]).unwrap();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) == 1 {
                pre.set_pixel(r, c, [1.0, 0.0, 1.0]);
            }
        }
    }
    let post = pre.clone();
    (pre, post)
}

fn paint_mask(img: &ImageTile) -> BinaryMask {
    BinaryMask::from_fn(img.height(), img.width(), |r, c| img.pixel(r, c) == [1.0, 0.0, 1.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_symmetric_reflexive_bounded(a in mask_strategy(20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_mask(&mut rng, a.height(), a.width(), 0.4);
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn upsample_then_coarse_grain_is_identity(m in mask_strategy(12), k in 2usize..6) {
        let up = upsample_mask(&m, (m.height() * k, m.width() * k)).unwrap();
        prop_assert!(up.values().iter().all(|&v| v <= 1));
        let back = coarse_grain_by_block(&up, k);
        prop_assert_eq!(back.values(), m.values());
    }

    #[test]
    fn coarse_grain_upsample_coarse_grain_is_idempotent(m in mask_strategy(30), k in 2usize..5) {
        let mut m = m;
        m.gsd_m_per_px = 0.5;
        let target = 0.5 * k as f64;
        // Divisible dims only.
        let h = m.height() - m.height() % k;
        let w = m.width() - m.width() % k;
        prop_assume!(h > 0 && w > 0);
        let m = BinaryMask::from_fn(h, w, |r, c| m.get(r, c) == 1).with_gsd(0.5);
        let once = coarse_grain_mask(&m, target).unwrap();
        let up = upsample_mask(&once, (h, w)).unwrap();
        let twice = coarse_grain_mask(&up, target).unwrap();
        prop_assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn geometric_augment_keeps_paint_aligned(m in mask_strategy(24), seed in any::<u64>()) {
        let (h, w) = m.dims();
        prop_assume!(h >= 4 && w >= 4);
        let (pre, post) = painted_triplet(&m);
        let cfg = AugmentConfig {
            rotation: Some(RotationAug { p: 0.7, max_degrees: 45.0, quarter_turns: seed % 2 == 0 }),
            crop: Some(CropAug { p: 0.5, size_px: 4 }),
            hflip_p: 0.5,
            vflip_p: 0.5,
            elastic: Some(ElasticAug { p: 0.5, ..ElasticAug::default() }),
            downscale: Some(DownscaleAug { p: 0.5, scale: 0.8 }),
            ..AugmentConfig::default()
        };
        let (pre2, mask2, post2) = augment(&pre, &m, &post, &cfg, seed).unwrap();
        prop_assert!(mask2.values().iter().all(|&v| v <= 1));
        prop_assert_eq!(iou(&paint_mask(&pre2), &mask2).unwrap(), 1.0);
        prop_assert_eq!(iou(&paint_mask(&post2), &mask2).unwrap(), 1.0);
    }

    #[test]
    fn photometric_augment_never_touches_mask(m in mask_strategy(16), seed in any::<u64>()) {
        let (pre, post) = painted_triplet(&m);
        let cfg = AugmentConfig {
            hue: Some(HueAug { p: 1.0, max_shift: 0.3 }),
            color_jitter: AugmentConfig::reforestation().color_jitter,
            ..AugmentConfig::default()
        };
        let (_, mask2, _) = augment(&pre, &m, &post, &cfg, seed).unwrap();
        prop_assert_eq!(mask2, m);
    }

    #[test]
    fn composite_touches_exactly_mask_support(m in mask_strategy(16), seed in any::<u64>()) {
        let (h, w) = m.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..h * w * 3).map(|_| rng.random_range(0..150)).collect();
        let pre = ImageTile::from_rgb8("p", h, w, &data, 0.5, Event::Synthetic).unwrap();
        let out = handcrafted_composite(&pre, &m, FLOOD_BROWN).unwrap();
        for r in 0..h {
            for c in 0..w {
                if m.get(r, c) == 1 {
                    prop_assert_eq!(out.pixel(r, c), FLOOD_BROWN.to_unit());
                } else {
                    prop_assert_eq!(out.pixel(r, c), pre.pixel(r, c));
                }
            }
        }
        prop_assert_eq!(handcrafted_composite(&out, &m, FLOOD_BROWN).unwrap(), out);
    }

    #[test]
    fn random_split_is_a_partition(n in 1usize..60, seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let records = (0..n)
            .map(|i| TripletRecord {
                tile_id: format!("synthetic_{i:04}"),
                pre_path: format!("pre/{i}.png").into(),
                mask_path: format!("mask/{i}.png").into(),
                post_path: format!("post/{i}.png").into(),
                event: Event::Synthetic,
                split: Split::Train,
                gsd_m_per_px: 0.5,
            })
            .collect();
        let manifest = Manifest::new("p", records).unwrap();
        let policy = SplitPolicy::Random { seed, test_frac: frac };
        let split = split_dataset(&manifest, &policy).unwrap();
        let train: HashSet<_> = split.split(Split::Train).map(|r| r.tile_id.clone()).collect();
        let test: HashSet<_> = split.split(Split::Test).map(|r| r.tile_id.clone()).collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert_eq!(test.len(), (n as f64 * frac).round() as usize);
        prop_assert_eq!(split_dataset(&manifest, &policy).unwrap(), split);
    }
}
