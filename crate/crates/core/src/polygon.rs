//! Even-odd polygon rasterization sampled at pixel centers.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// A polygon vertex in tile pixel coordinates: `x` is the column axis, `y`
/// the row axis, both in `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
}

/// Twice the signed area (shoelace).
fn doubled_area(poly: &[Vertex]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum()
}

pub fn validate_polygon(poly: &[Vertex], height: usize, width: usize) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::InvalidPolygon(format!(
            "need at least 3 vertices, got {}",
            poly.len()
        )));
    }
    if let Some(v) = poly.iter().find(|v| {
        !(v.x.is_finite() && v.y.is_finite())
            || v.x < 0.0
            || v.y < 0.0
            || v.x > width as f64
            || v.y > height as f64
    }) {
        return Err(Error::InvalidPolygon(format!(
            "vertex ({}, {}) outside the {height}x{width} tile",
            v.x, v.y
        )));
    }
    if doubled_area(poly).abs() < 1e-12 {
        return Err(Error::InvalidPolygon("polygon has zero area".into()));
    }
    Ok(())
}

/// Rasterizes with the even-odd rule: pixel `(r, c)` is set when its center
/// `(c + 0.5, r + 0.5)` is inside.
pub fn rasterize_polygon(poly: &[Vertex], height: usize, width: usize) -> Result<BinaryMask> {
    validate_polygon(poly, height, width)?;
    let mut mask = BinaryMask::zeros(height, width);
    let n = poly.len();
    let mut crossings = Vec::with_capacity(n);
    for r in 0..height {
        let y = r as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            // Half-open rule on y avoids double-counting shared vertices.
            if (a.y <= y) != (b.y <= y) {
                crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            for c in 0..width {
                let x = c as f64 + 0.5;
                if x >= pair[0] && x < pair[1] {
                    mask.set(r, c, true);
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vertex {
        Vertex { x, y }
    }

    /// Independent point-in-polygon check by ray casting.
    fn inside(poly: &[Vertex], x: f64, y: f64) -> bool {
        let mut inside = false;
        let mut j = poly.len() - 1;
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[j]);
            if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    #[test]
    fn full_tile_square_covers_everything() {
        let poly = [v(0.0, 0.0), v(16.0, 0.0), v(16.0, 8.0), v(0.0, 8.0)];
        let m = rasterize_polygon(&poly, 8, 16).unwrap();
        assert_eq!(m.coverage(), 1.0);
    }

    #[test]
    fn triangle_matches_ray_casting() {
        let poly = [v(1.3, 0.7), v(14.2, 3.1), v(5.5, 11.9)];
        let m = rasterize_polygon(&poly, 12, 16).unwrap();
        for r in 0..12 {
            for c in 0..16 {
                let expect = inside(&poly, c as f64 + 0.5, r as f64 + 0.5);
                assert_eq!(m.get(r, c) == 1, expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn self_intersecting_uses_even_odd() {
        // Pentagram: the central pentagon is outside under even-odd.
        let c = (16.0, 16.0);
        let pts: Vec<Vertex> = (0..5)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 + k as f64 * 4.0 * std::f64::consts::PI / 5.0;
                v(c.0 + 14.0 * a.cos(), c.1 - 14.0 * a.sin())
            })
            .collect();
        let m = rasterize_polygon(&pts, 32, 32).unwrap();
        assert_eq!(m.get(16, 16), 0);
        assert!(m.count_ones() > 0);
    }

    #[test]
    fn rejects_degenerate_polygons() {
        assert!(rasterize_polygon(&[v(0.0, 0.0), v(1.0, 1.0)], 4, 4).is_err());
        assert!(rasterize_polygon(&[v(0.0, 0.0), v(1.0, 1.0), v(2.0, 2.0)], 4, 4).is_err());
        assert!(rasterize_polygon(&[v(0.0, 0.0), v(5.0, 0.0), v(0.0, 2.0)], 4, 4).is_err());
    }
}
