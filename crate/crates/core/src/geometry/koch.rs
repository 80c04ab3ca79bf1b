use serde::{Deserialize, Serialize};

use super::{GridDomain, GridSpec};
use crate::error::{Error, Result};

/// Hausdorff dimension `log 4 / log 3` of the Koch curve.
pub const KOCH_DIMENSION: f64 = 1.261_859_507_142_914_9;

/// Axis-aligned square `[x0, x0 + side] × [y0, y0 + side]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareFootprint {
    pub origin: [f64; 2],
    pub side: f64,
}

impl SquareFootprint {
    pub fn unit() -> Self {
        Self { origin: [0.0, 0.0], side: 1.0 }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.origin[k] && p[k] <= self.origin[k] + self.side)
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [x, y] = self.origin;
        let s = self.side;
        [[x, y], [x + s, y], [x + s, y + s], [x, y + s]]
    }
}

/// Number of polygon segments at a given level: four sides, each split into `4^level`.
pub fn koch_segment_count(level: usize) -> usize {
    4 * 4usize.pow(level as u32)
}

/// Largest admissible cell width for a level: a quarter of the finest segment length.
pub fn koch_required_spacing(level: usize, base: &SquareFootprint) -> f64 {
    base.side * (1.0 / 3.0f64).powi(level as i32) / 4.0
}

/// Counter-clockwise vertex list of the square with every side replaced by the
/// level-`level` Koch curve, bumps pointing outward. The polygon is implicitly closed.
pub fn koch_polygon(level: usize, base: &SquareFootprint) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = base.corners().to_vec();
    // rotation by -60 degrees turns the middle third outward for a CCW traversal
    let (c, s) = (0.5f64, -(3.0f64).sqrt() / 2.0);
    for _ in 0..level {
        let mut next = Vec::with_capacity(poly.len() * 4);
        for k in 0..poly.len() {
            let p = poly[k];
            let q = poly[(k + 1) % poly.len()];
            let d = [(q[0] - p[0]) / 3.0, (q[1] - p[1]) / 3.0];
            let a = [p[0] + d[0], p[1] + d[1]];
            let b = [p[0] + 2.0 * d[0], p[1] + 2.0 * d[1]];
            let apex = [a[0] + c * d[0] - s * d[1], a[1] + s * d[0] + c * d[1]];
            next.extend_from_slice(&[p, a, apex, b]);
        }
        poly = next;
    }
    poly
}

/// Shoelace area of a closed polygon (positive for CCW orientation).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
}

/// Perimeter of a closed polygon.
pub fn polygon_length(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
        })
        .sum()
}

/// Pixelation of the level-`level` Koch-square prefractal built on `base`.
///
/// A cell is inside when its center is inside the polygon (scanline fill, even-odd rule).
pub fn koch_prefractal_domain(grid: GridSpec, level: usize, base: SquareFootprint) -> Result<GridDomain> {
    let required = koch_required_spacing(level, &base);
    let h = grid.h();
    if h > required * (1.0 + 1e-9) {
        return Err(Error::ResolutionTooCoarse { level, h, required });
    }
    let poly = koch_polygon(level, &base);
    if poly.iter().any(|&p| !grid.contains(p)) {
        return Err(Error::InvalidInput(format!(
            "Koch level {level} on the given base leaves the confinement box"
        )));
    }
    let mask = scanline_fill(&grid, &poly);
    GridDomain::from_mask(grid, mask)
}

/// Cells whose centers lie inside the closed polygon `poly`.
pub(crate) fn scanline_fill(grid: &GridSpec, poly: &[[f64; 2]]) -> Vec<bool> {
    let n = grid.cells_per_side();
    let h = grid.h();
    let [ox, oy] = grid.origin();
    let mut mask = vec![false; grid.cell_count()];
    let mut crossings = Vec::new();
    for j in 0..n {
        let y = oy + (j as f64 + 0.5) * h;
        crossings.clear();
        for k in 0..poly.len() {
            let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
            if (p[1] <= y && y < q[1]) || (q[1] <= y && y < p[1]) {
                let t = (y - p[1]) / (q[1] - p[1]);
                crossings.push(p[0] + t * (q[0] - p[0]));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            let lo = ((pair[0] - ox) / h - 0.5).ceil().max(0.0) as usize;
            let hi_f = ((pair[1] - ox) / h - 0.5).floor();
            if hi_f < 0.0 {
                continue;
            }
            let hi = (hi_f as usize).min(n - 1);
            for i in lo..=hi {
                mask[grid.cell_index(i, j)] = true;
            }
        }
    }
    mask
}
