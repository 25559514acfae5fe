//! Row-major sample montages.

use std::path::Path;

use floodviz_core::io::write_image;
use floodviz_core::ImageTile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_GRID_COLS: usize = 8;

/// `k` distinct indices out of `n`, ascending. Everything when `k >= n`.
pub fn select_tiles(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Lays equally sized tiles out row-major, `cols` per row (fewer when there
/// are fewer tiles). Empty trailing cells stay black.
pub fn render_grid(images: &[ImageTile], cols: usize) -> Result<ImageTile> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("grid needs at least one image".into()))?;
    if cols == 0 {
        return Err(Error::Config("grid needs at least one column".into()));
    }
    let (h, w) = first.dims();
    if let Some(bad) = images.iter().find(|t| t.dims() != (h, w)) {
        return Err(floodviz_core::Error::DimMismatch {
            left: bad.dims(),
            right: (h, w),
        }
        .into());
    }
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut pixels = vec![0f32; gh * gw * 3];
    for (k, img) in images.iter().enumerate() {
        let (r0, c0) = ((k / cols) * h, (k % cols) * w);
        for y in 0..h {
            let src = &img.pixels()[y * w * 3..(y + 1) * w * 3];
            let start = ((r0 + y) * gw + c0) * 3;
            pixels[start..start + w * 3].copy_from_slice(src);
        }
    }
    let mut out = first.with_pixels(gh, gw, pixels)?;
    out.tile_id = "grid".into();
    Ok(out)
}

pub fn write_grid(path: &Path, images: &[ImageTile], cols: usize) -> Result<()> {
    write_image(path, &render_grid(images, cols)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile(v: f32) -> ImageTile {
        ImageTile::filled("t", 4, 4, [v; 3]).unwrap()
    }

    #[test]
    fn sixty_four_tiles_make_an_eight_by_eight_grid() {
        let tiles: Vec<_> = (0..64).map(|i| tile(i as f32 / 64.0)).collect();
        let g = render_grid(&tiles, DEFAULT_GRID_COLS).unwrap();
        assert_eq!(g.dims(), (32, 32));
        // Tile 9 sits in row 1, column 1.
        assert_eq!(g.pixel(5, 5), [9.0 / 64.0; 3]);
        assert_eq!(g.pixel(31, 31), [63.0 / 64.0; 3]);
    }

    #[test]
    fn single_tile_grid() {
        let g = render_grid(&[tile(0.5)], 8).unwrap();
        assert_eq!(g.dims(), (4, 4));
    }

    #[test]
    fn partial_last_row_is_black() {
        let tiles: Vec<_> = (0..3).map(|_| tile(1.0)).collect();
        let g = render_grid(&tiles, 2).unwrap();
        assert_eq!(g.dims(), (8, 8));
        assert_eq!(g.pixel(6, 6), [0.0; 3]);
    }

    #[test]
    fn selection_is_seeded() {
        let a = select_tiles(100, 64, 7);
        assert_eq!(a, select_tiles(100, 64, 7));
        assert_ne!(a, select_tiles(100, 64, 8));
        assert_eq!(a.len(), 64);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_tiles(5, 64, 0), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_or_mixed_sizes_error() {
        assert!(render_grid(&[], 8).is_err());
        let other = ImageTile::filled("o", 8, 8, [0.0; 3]).unwrap();
        assert!(render_grid(&[tile(0.0), other], 8).is_err());
    }
}
