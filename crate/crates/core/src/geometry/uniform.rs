//! Sampled falsifier for the (ε, ∞)-uniform domain condition.
//!
//! For a pair of cell centers `x, y` a path is admissible when every vertex `z`
//! satisfies `d(z, ∂Ω) ≥ ε |x − z| |y − z| / |x − y|`. The shortest admissible
//! path in the 8-neighbour cell graph must then have length at most `|x − y| / ε`.
//! Both inequalities get one cell diagonal of slack. Passing proves nothing about
//! the continuum domain; failing exhibits a bad pair.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DistanceField, GridDomain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub pass: bool,
    /// Pair with the largest length ratio, if any non-degenerate pair was checked.
    pub worst_pair: Option<([f64; 2], [f64; 2])>,
    /// Largest `ℓ(γ) / (|x − y|/ε + slack)` over checked pairs; infinite when
    /// some pair has no admissible path. `pass` iff this is at most 1.
    pub worst_ratio: f64,
    pub pairs_checked: usize,
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path from cell `x` to cell `y` through cells satisfying the
/// distance-to-boundary condition for `eps`. Diagonal steps require both
/// orthogonal neighbours inside, so the straight step stays in the open domain.
/// Returns the path length and the cell sequence.
pub fn shortest_admissible_path(
    dom: &GridDomain,
    dist: &DistanceField,
    x: usize,
    y: usize,
    eps: f64,
) -> Option<(f64, Vec<usize>)> {
    let g = dom.grid();
    let h = g.h();
    let slack = h * std::f64::consts::SQRT_2;
    let px = g.cell_center(x);
    let py = g.cell_center(y);
    let dxy = norm(px, py);
    let admissible = |z: usize| {
        let pz = g.cell_center(z);
        dist.get(z) + slack >= eps * norm(px, pz) * norm(py, pz) / dxy
    };
    let n = g.cells_per_side() as isize;
    let mut best = vec![f64::INFINITY; g.cell_count()];
    let mut prev = vec![usize::MAX; g.cell_count()];
    let mut heap = BinaryHeap::new();
    best[x] = 0.0;
    heap.push(Entry { dist: 0.0, cell: x });
    while let Some(Entry { dist: d, cell }) = heap.pop() {
        if d > best[cell] {
            continue;
        }
        if cell == y {
            let mut path = vec![y];
            let mut c = y;
            while c != x {
                c = prev[c];
                path.push(c);
            }
            path.reverse();
            return Some((d, path));
        }
        let (i, j) = g.cell_coords(cell);
        for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
            let (a, b) = (i as isize + di, j as isize + dj);
            if a < 0 || b < 0 || a >= n || b >= n {
                continue;
            }
            let nb = g.cell_index(a as usize, b as usize);
            if !dom.inside(nb) {
                continue;
            }
            let step = if di != 0 && dj != 0 {
                let o1 = g.cell_index(a as usize, j);
                let o2 = g.cell_index(i, b as usize);
                if !(dom.inside(o1) && dom.inside(o2)) {
                    continue;
                }
                h * std::f64::consts::SQRT_2
            } else {
                h
            };
            let nd = d + step;
            if nd < best[nb] && admissible(nb) {
                best[nb] = nd;
                prev[nb] = cell;
                heap.push(Entry { dist: nd, cell: nb });
            }
        }
    }
    None
}

fn norm(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Checks the given cell pairs; degenerate pairs `x = y` are skipped.
pub fn check_uniform_eps_on_pairs(dom: &GridDomain, eps: f64, pairs: &[(usize, usize)]) -> UniformityReport {
    let g = dom.grid();
    let slack = g.h() * std::f64::consts::SQRT_2;
    let dist = DistanceField::to_boundary(dom);
    let mut worst_ratio = 0.0f64;
    let mut worst_pair = None;
    let mut checked = 0;
    for &(x, y) in pairs {
        if x == y {
            continue;
        }
        checked += 1;
        let (px, py) = (g.cell_center(x), g.cell_center(y));
        let bound = norm(px, py) / eps + slack;
        let ratio = match shortest_admissible_path(dom, &dist, x, y, eps) {
            Some((len, _)) => len / bound,
            None => f64::INFINITY,
        };
        if ratio > worst_ratio || worst_pair.is_none() {
            worst_ratio = ratio.max(worst_ratio);
            worst_pair = Some((px, py));
        }
    }
    UniformityReport { pass: worst_ratio <= 1.0, worst_pair, worst_ratio, pairs_checked: checked }
}

/// Samples `sample_pairs` uniformly random pairs of inside cells (seeded) and checks them.
pub fn check_uniform_eps(dom: &GridDomain, eps: f64, sample_pairs: usize, seed: u64) -> UniformityReport {
    let cells: Vec<usize> = dom.inside_cells().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = (0..sample_pairs.max(1))
        .map(|_| (cells[rng.gen_range(0..cells.len())], cells[rng.gen_range(0..cells.len())]))
        .collect();
    check_uniform_eps_on_pairs(dom, eps, &pairs)
}
