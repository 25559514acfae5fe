use candle_core::Device;
use floodviz_core::metrics::PerceptualMetric;
use floodviz_core::{Event, ImageTile};
use floodviz_models::lpips::Lpips;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(n: usize) -> ImageTile {
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let field = ((x / 8 + y / 8) % 2) as u8;
            data.extend_from_slice(&[40 + 80 * field, 120, 60 + (y * 2) as u8]);
        }
    }
    ImageTile::from_rgb8("scene", n, n, &data, 0.5, Event::Synthetic).unwrap()
}

#[test]
fn hue_shift_outweighs_faint_noise() {
    let m = Lpips::random_init(0, &Device::Cpu).unwrap();
    let a = scene(64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = a
        .with_pixels(
            64,
            64,
            a.pixels()
                .iter()
                .map(|v| (v + rng.random_range(-0.01..0.01)).clamp(0.0, 1.0))
                .collect(),
        )
        .unwrap();
    // Rotate channels: same structure, different hue.
    let shifted = a
        .with_pixels(
            64,
            64,
            a.pixels()
                .chunks(3)
                .flat_map(|p| [p[2], p[0], p[1]])
                .collect(),
        )
        .unwrap();
    let d_noise = m.distance(&a, &noisy).unwrap();
    let d_hue = m.distance(&a, &shifted).unwrap();
    assert!(d_hue > d_noise, "hue {d_hue} vs noise {d_noise}");
}
