//! Confinement box, pixel domains and domain families.
//!
//! A [`GridSpec`] discretizes the confinement box `D` into `n × n` square
//! cells of width `h = side / n`. A [`GridDomain`] is a 4-connected union of
//! closed cells; the optional required core plays the role of the fixed open
//! set every admissible shape must contain.

mod distance;
mod koch;
mod serde_rle;
mod uniform;

pub use distance::{
    boundary_hausdorff_distance, char_distance, hausdorff_distance, squared_edt,
    DistanceField,
};
pub use koch::{
    koch_polygon, koch_prefractal_domain, koch_required_spacing, koch_segment_count,
    polygon_area, polygon_length, SquareFootprint, KOCH_DIMENSION,
};
pub use serde_rle::{decode_rle, encode_rle, RleRun};
pub use uniform::{check_uniform_eps, shortest_admissible_path, UniformityReport};

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Uniform square grid over the confinement box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw", into = "GridSpecRaw")]
pub struct GridSpec {
    origin: [f64; 2],
    side: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecRaw {
    origin: [f64; 2],
    side: f64,
    n: usize,
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = Error;
    fn try_from(raw: GridSpecRaw) -> Result<Self> {
        GridSpec::new(raw.origin, raw.side, raw.n)
    }
}

impl From<GridSpec> for GridSpecRaw {
    fn from(g: GridSpec) -> Self {
        GridSpecRaw { origin: g.origin, side: g.side, n: g.n }
    }
}

impl GridSpec {
    pub fn new(origin: [f64; 2], side: f64, cells_per_side: usize) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidGrid(format!("side must be positive, got {side}")));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        if cells_per_side < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 cells per side, got {cells_per_side}"
            )));
        }
        Ok(Self { origin, side, n: cells_per_side })
    }

    /// Unit box `[0, 1]²` with `n` cells per side.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new([0.0, 0.0], 1.0, n)
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn cell_coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.cell_coords(idx);
        let h = self.h();
        [
            self.origin[0] + (i as f64 + 0.5) * h,
            self.origin[1] + (j as f64 + 0.5) * h,
        ]
    }

    /// Vertices per side, `n + 1`.
    pub fn nodes_per_side(&self) -> usize {
        self.n + 1
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn node_coords(&self, idx: usize) -> (usize, usize) {
        (idx % (self.n + 1), idx / (self.n + 1))
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [self.origin[0] + i as f64 * h, self.origin[1] + j as f64 * h]
    }

    /// Whether `p` lies in the closed box.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let tol = 1e-12 * self.side;
        (0..2).all(|k| p[k] >= self.origin[k] - tol && p[k] <= self.origin[k] + self.side + tol)
    }

    /// Dyadic radii `2^-k`, `k = 1..=k_max`, keeping only radii not below `h`.
    pub fn resolved_dyadic_radii(&self, k_max: u32) -> Vec<f64> {
        let h = self.h();
        crate::measures::dyadic_radii(k_max)
            .into_iter()
            .filter(|&r| r >= h * (1.0 - 1e-12))
            .collect()
    }

    /// 4-neighbours of a cell that lie on the grid.
    pub(crate) fn cell_neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.cell_coords(idx);
        let n = self.n as isize;
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(di, dj)| {
                let (a, b) = (i as isize + di, j as isize + dj);
                (a >= 0 && b >= 0 && a < n && b < n).then(|| self.cell_index(a as usize, b as usize))
            })
    }
}

/// A 4-connected union of closed grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    grid: GridSpec,
    inside: Vec<bool>,
    core: Option<Vec<bool>>,
}

impl GridDomain {
    /// Builds a domain from a cell mask, enforcing non-emptiness and 4-connectivity.
    pub fn from_mask(grid: GridSpec, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != grid.cell_count() {
            return Err(Error::InvalidInput(format!(
                "mask has {} cells, grid has {}",
                inside.len(),
                grid.cell_count()
            )));
        }
        if !inside.iter().any(|&b| b) {
            return Err(Error::EmptyDomain);
        }
        let components = count_components(&grid, &inside);
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(Self { grid, inside, core: None })
    }

    /// The whole confinement box.
    pub fn full_box(grid: GridSpec) -> Self {
        Self { grid, inside: vec![true; grid.cell_count()], core: None }
    }

    /// Attaches a required core mask; it must be nonempty and lie inside the domain.
    pub fn with_core(mut self, core: Vec<bool>) -> Result<Self> {
        if core.len() != self.grid.cell_count() {
            return Err(Error::InvalidInput("core mask size mismatch".into()));
        }
        if !core.iter().any(|&b| b) {
            return Err(Error::InvalidInput("required core is empty".into()));
        }
        if core.iter().zip(&self.inside).any(|(&c, &i)| c && !i) {
            return Err(Error::CoreOutsideDomain);
        }
        self.core = Some(core);
        Ok(self)
    }

    /// Attaches the cells whose centers satisfy `predicate` as required core.
    pub fn with_core_predicate(self, predicate: impl Fn([f64; 2]) -> bool) -> Result<Self> {
        let core = (0..self.grid.cell_count())
            .map(|c| predicate(self.grid.cell_center(c)))
            .collect();
        self.with_core(core)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn inside(&self, cell: usize) -> bool {
        self.inside[cell]
    }

    pub fn mask(&self) -> &[bool] {
        &self.inside
    }

    pub fn required_core(&self) -> Option<&[bool]> {
        self.core.as_deref()
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn inside_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.inside.iter().enumerate().filter(|(_, &b)| b).map(|(c, _)| c)
    }

    /// Lebesgue measure of the pixelation.
    pub fn area(&self) -> f64 {
        let h = self.grid.h();
        self.inside_count() as f64 * h * h
    }

    /// Whether `cell` is inside with at least one 4-neighbour outside the domain or the grid.
    pub fn is_boundary_cell(&self, cell: usize) -> bool {
        if !self.inside[cell] {
            return false;
        }
        let (i, j) = self.grid.cell_coords(cell);
        let n = self.grid.n;
        if i == 0 || j == 0 || i + 1 == n || j + 1 == n {
            return true;
        }
        self.grid.cell_neighbors4(cell).any(|nb| !self.inside[nb])
    }

    pub fn boundary_cells(&self) -> Vec<usize> {
        (0..self.grid.cell_count()).filter(|&c| self.is_boundary_cell(c)).collect()
    }

    /// Whether `p` lies in the closed pixelation (union of closed inside cells).
    pub fn contains_closed(&self, p: [f64; 2]) -> bool {
        self.containing_cell(p).is_some()
    }

    /// Lowest-index inside cell whose closed square contains `p`.
    pub fn containing_cell(&self, p: [f64; 2]) -> Option<usize> {
        let h = self.grid.h();
        let tol = 1e-9;
        let n = self.grid.n as isize;
        let u = (p[0] - self.grid.origin[0]) / h;
        let v = (p[1] - self.grid.origin[1]) / h;
        let candidates = |x: f64| -> Vec<isize> {
            let f = x.floor();
            let mut c = vec![f as isize];
            if x - f < tol {
                c.push(f as isize - 1);
            }
            if f + 1.0 - x < tol {
                c.push(f as isize + 1);
            }
            c
        };
        let mut best: Option<usize> = None;
        for j in candidates(v) {
            for i in candidates(u) {
                if i < 0 || j < 0 || i >= n || j >= n {
                    continue;
                }
                let c = self.grid.cell_index(i as usize, j as usize);
                let (lo_u, lo_v) = (i as f64, j as f64);
                let inside_square = u >= lo_u - tol && u <= lo_u + 1.0 + tol && v >= lo_v - tol && v <= lo_v + 1.0 + tol;
                if self.inside[c] && inside_square && best.is_none_or(|b| c < b) {
                    best = Some(c);
                }
            }
        }
        best
    }
}

fn count_components(grid: &GridSpec, inside: &[bool]) -> usize {
    let mut seen = vec![false; inside.len()];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..inside.len() {
        if !inside[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for nb in grid.cell_neighbors4(c) {
                if inside[nb] && !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    components
}

/// Pixel domain of all cells whose centers satisfy `predicate`.
pub fn build_pixel_domain(grid: GridSpec, predicate: impl Fn([f64; 2]) -> bool) -> Result<GridDomain> {
    let inside = (0..grid.cell_count()).map(|c| predicate(grid.cell_center(c))).collect();
    GridDomain::from_mask(grid, inside)
}

/// Ordered sequence of domains on one grid.
#[derive(Debug, Clone)]
pub struct DomainFamily {
    members: Vec<GridDomain>,
    labels: Vec<String>,
}

impl DomainFamily {
    pub fn new(members: Vec<GridDomain>, labels: Vec<String>) -> Result<Self> {
        if members.len() != labels.len() {
            return Err(Error::InvalidInput("one label per member required".into()));
        }
        if let Some(first) = members.first() {
            if members.iter().any(|m| m.grid() != first.grid()) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(Self { members, labels })
    }

    pub fn members(&self) -> &[GridDomain] {
        &self.members
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.members.first().map(|m| m.grid())
    }
}

/// Full box with a centred square notch of width and depth `w` cut from the
/// bottom side, one member per width.
pub fn notch_family(grid: GridSpec, widths: &[f64]) -> Result<DomainFamily> {
    let footprint = SquareFootprint { origin: grid.origin(), side: grid.side() };
    notch_family_in(grid, footprint, widths)
}

/// Like [`notch_family`] but notching `square` instead of the whole box.
pub fn notch_family_in(grid: GridSpec, square: SquareFootprint, widths: &[f64]) -> Result<DomainFamily> {
    let min = 2.0 * grid.h();
    for (k, &w) in widths.iter().enumerate() {
        if !(w.is_finite() && w >= min * (1.0 - 1e-12)) {
            return Err(Error::WidthBelowResolution { width: w, min });
        }
        if k > 0 && w >= widths[k - 1] {
            return Err(Error::InvalidInput("notch widths must be strictly decreasing".into()));
        }
        if w >= square.side {
            return Err(Error::InvalidInput(format!("notch width {w} exceeds square side")));
        }
    }
    let mut members = Vec::with_capacity(widths.len());
    let mut labels = Vec::with_capacity(widths.len());
    for &w in widths {
        members.push(notched_square(grid, square, w)?);
        labels.push(format!("notch_w={w}"));
    }
    DomainFamily::new(members, labels)
}

/// `square` minus the centred bottom notch `(cx - w/2, cx + w/2) × [y0, y0 + w)`.
pub fn notched_square(grid: GridSpec, square: SquareFootprint, width: f64) -> Result<GridDomain> {
    let cx = square.origin[0] + 0.5 * square.side;
    let y0 = square.origin[1];
    build_pixel_domain(grid, |p| {
        square.contains(p) && !((p[0] - cx).abs() < 0.5 * width && p[1] - y0 < width)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_tiny_and_degenerate() {
        assert!(GridSpec::unit(3).is_err());
        assert!(GridSpec::new([0.0, 0.0], 0.0, 8).is_err());
        let g = GridSpec::new([1.0, 2.0], 2.0, 8).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.cell_center(g.cell_index(1, 2)), [1.375, 2.625]);
    }

    #[test]
    fn full_box_predicate_selects_everything() {
        let g = GridSpec::unit(8).unwrap();
        let d = build_pixel_domain(g, |_| true).unwrap();
        assert_eq!(d.inside_count(), 64);
    }

    #[test]
    fn empty_selection_is_rejected() {
        let g = GridSpec::unit(8).unwrap();
        assert_eq!(build_pixel_domain(g, |p| p[0] < 0.0).unwrap_err(), Error::EmptyDomain);
    }

    #[test]
    fn half_plane_counts_32_cells() {
        let g = GridSpec::unit(8).unwrap();
        let d = build_pixel_domain(g, |p| p[0] <= 0.5).unwrap();
        assert_eq!(d.inside_count(), 32);
    }

    #[test]
    fn two_blobs_are_disconnected() {
        let g = GridSpec::unit(8).unwrap();
        let err = build_pixel_domain(g, |p| p[0] < 0.25 || p[0] > 0.75).unwrap_err();
        assert_eq!(err, Error::Disconnected { components: 2 });
        // diagonal contact is not 4-connected
        let err = build_pixel_domain(g, |p| (p[0] < 0.125 && p[1] < 0.125) || ((0.125..0.25).contains(&p[0]) && (0.125..0.25).contains(&p[1])))
            .unwrap_err();
        assert_eq!(err, Error::Disconnected { components: 2 });
    }

    #[test]
    fn core_must_be_inside() {
        let g = GridSpec::unit(8).unwrap();
        let d = build_pixel_domain(g, |p| p[0] <= 0.5).unwrap();
        assert!(d.clone().with_core_predicate(|p| p[0] < 0.25).is_ok());
        assert_eq!(d.with_core_predicate(|p| p[0] > 0.75).unwrap_err(), Error::CoreOutsideDomain);
    }

    #[test]
    fn notch_family_counts() {
        let g = GridSpec::unit(64).unwrap();
        let fam = notch_family(g, &[0.25, 0.125]).unwrap();
        assert_eq!(fam.len(), 2);
        let counts: Vec<usize> = fam.members().iter().map(|m| m.inside_count()).collect();
        assert!(counts[1] > counts[0]);
        // removed cells = w² / h²
        assert_eq!(64 * 64 - counts[0], 16 * 16);
        assert_eq!(64 * 64 - counts[1], 8 * 8);
    }

    #[test]
    fn notch_family_validates_widths() {
        let g = GridSpec::unit(64).unwrap();
        assert!(matches!(notch_family(g, &[0.01]), Err(Error::WidthBelowResolution { .. })));
        assert!(notch_family(g, &[0.125, 0.25]).is_err());
    }

    #[test]
    fn containing_cell_breaks_ties_by_lowest_index() {
        let g = GridSpec::unit(4).unwrap();
        let d = GridDomain::full_box(g);
        // shared corner of cells 0, 1, 4, 5
        assert_eq!(d.containing_cell([0.25, 0.25]), Some(0));
        let half = build_pixel_domain(g, |p| p[0] > 0.25).unwrap();
        assert_eq!(half.containing_cell([0.25, 0.25]), Some(1));
        assert_eq!(half.containing_cell([0.1, 0.1]), None);
    }

    #[test]
    fn boundary_cells_of_square_ring() {
        let g = GridSpec::unit(8).unwrap();
        let d = GridDomain::full_box(g);
        assert_eq!(d.boundary_cells().len(), 28);
    }
}
