use super::{GridDomain, GridSpec};
use crate::error::{Error, Result};

/// Exact squared Euclidean distance transform on a `width × height` lattice,
/// in lattice units. Feature cells get 0; with no features every entry is infinite.
///
/// Separable lower-envelope-of-parabolas algorithm, columns then rows.
pub fn squared_edt(width: usize, height: usize, features: &[bool]) -> Vec<f64> {
    assert_eq!(features.len(), width * height);
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();
    let len = width.max(height);
    let mut buf_f = vec![0.0; len];
    let mut buf_d = vec![0.0; len];
    let mut v = vec![0usize; len];
    let mut z = vec![0.0; len + 1];
    for i in 0..width {
        for j in 0..height {
            buf_f[j] = grid[j * width + i];
        }
        edt_1d(&buf_f[..height], &mut buf_d[..height], &mut v, &mut z);
        for j in 0..height {
            grid[j * width + i] = buf_d[j];
        }
    }
    for j in 0..height {
        buf_f[..width].copy_from_slice(&grid[j * width..(j + 1) * width]);
        edt_1d(&buf_f[..width], &mut buf_d[..width], &mut v, &mut z);
        grid[j * width..(j + 1) * width].copy_from_slice(&buf_d[..width]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        d.fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &finite[1..] {
        let intersect = |p: usize| {
            ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
        };
        let mut s = intersect(v[k]);
        // z[0] = -inf, so k never underflows
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Cells of the grid padded with one ghost ring, which always belongs to the complement.
struct Padded {
    width: usize,
}

impl Padded {
    fn new(grid: &GridSpec) -> Self {
        Self { width: grid.cells_per_side() + 2 }
    }

    /// Complement `D̄ \ Ω` as a padded mask: ghost ring plus every outside cell.
    fn complement(&self, dom: &GridDomain) -> Vec<bool> {
        let n = dom.grid().cells_per_side();
        let w = self.width;
        let mut mask = vec![true; w * w];
        for j in 0..n {
            for i in 0..n {
                mask[(j + 1) * w + (i + 1)] = !dom.inside(dom.grid().cell_index(i, j));
            }
        }
        mask
    }
}

fn directed_max(from: &[bool], dist_sq: &[f64]) -> f64 {
    from.iter()
        .zip(dist_sq)
        .filter(|(&f, _)| f)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Hausdorff distance between the complements `D̄ \ A` and `D̄ \ B`, sampled at
/// cell centers. The complement always contains a ghost ring just outside the
/// box standing in for `∂D`, so the full box has a nonempty complement.
pub fn hausdorff_distance(a: &GridDomain, b: &GridDomain) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let pad = Padded::new(a.grid());
    let ca = pad.complement(a);
    let cb = pad.complement(b);
    let da = squared_edt(pad.width, pad.width, &ca);
    let db = squared_edt(pad.width, pad.width, &cb);
    let d = directed_max(&ca, &db).max(directed_max(&cb, &da));
    Ok(d * a.grid().h())
}

/// Closed-set Hausdorff distance between the boundary-cell center sets of two domains.
pub fn boundary_hausdorff_distance(a: &GridDomain, b: &GridDomain) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let g = a.grid();
    let n = g.cells_per_side();
    let ba: Vec<bool> = (0..g.cell_count()).map(|c| a.is_boundary_cell(c)).collect();
    let bb: Vec<bool> = (0..g.cell_count()).map(|c| b.is_boundary_cell(c)).collect();
    let da = squared_edt(n, n, &ba);
    let db = squared_edt(n, n, &bb);
    Ok(directed_max(&ba, &db).max(directed_max(&bb, &da)) * g.h())
}

/// `h² · |A △ B|`, the L¹ distance of the indicator functions.
pub fn char_distance(a: &GridDomain, b: &GridDomain) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let h = a.grid().h();
    let diff = a.mask().iter().zip(b.mask()).filter(|(x, y)| x != y).count();
    Ok(diff as f64 * h * h)
}

/// Distance from inside cell centers to the boundary of the pixel domain.
#[derive(Debug, Clone)]
pub struct DistanceField {
    values: Vec<f64>,
}

impl DistanceField {
    /// `d(z, ∂Ω)` for each inside cell center `z`, taken as the distance to the
    /// nearest outside cell center (ghost ring included) minus half a cell.
    pub fn to_boundary(dom: &GridDomain) -> Self {
        let g = dom.grid();
        let n = g.cells_per_side();
        let pad = Padded::new(g);
        let comp = pad.complement(dom);
        let sq = squared_edt(pad.width, pad.width, &comp);
        let h = g.h();
        let mut values = vec![0.0; g.cell_count()];
        for j in 0..n {
            for i in 0..n {
                let c = g.cell_index(i, j);
                if dom.inside(c) {
                    values[c] = (sq[(j + 1) * pad.width + i + 1].sqrt() - 0.5) * h;
                }
            }
        }
        Self { values }
    }

    pub fn get(&self, cell: usize) -> f64 {
        self.values[cell]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_pixel_domain, notch_family};

    fn brute_sq(width: usize, height: usize, features: &[bool]) -> Vec<f64> {
        (0..width * height)
            .map(|c| {
                let (i, j) = ((c % width) as f64, (c / width) as f64);
                (0..width * height)
                    .filter(|&f| features[f])
                    .map(|f| {
                        let (a, b) = ((f % width) as f64, (f / width) as f64);
                        (a - i).powi(2) + (b - j).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Hausdorff distance by exhaustive pairwise scan over cell centers.
    fn brute_hausdorff(a: &GridDomain, b: &GridDomain) -> f64 {
        let g = a.grid();
        let n = g.cells_per_side() as isize;
        let h = g.h();
        let comp = |d: &GridDomain| -> Vec<(f64, f64)> {
            let mut pts = Vec::new();
            for j in -1..=n {
                for i in -1..=n {
                    let ghost = i < 0 || j < 0 || i >= n || j >= n;
                    if ghost || !d.inside(g.cell_index(i as usize, j as usize)) {
                        pts.push((i as f64 * h, j as f64 * h));
                    }
                }
            }
            pts
        };
        let (pa, pb) = (comp(a), comp(b));
        let directed = |p: &[(f64, f64)], q: &[(f64, f64)]| {
            p.iter()
                .map(|x| q.iter().map(|y| ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        directed(&pa, &pb).max(directed(&pb, &pa))
    }

    #[test]
    fn edt_matches_brute_force() {
        let (w, h) = (13, 9);
        let features: Vec<bool> = (0..w * h).map(|c| (c * 7919) % 11 == 0).collect();
        let fast = squared_edt(w, h, &features);
        let slow = brute_sq(w, h, &features);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(squared_edt(3, 3, &[false; 9]).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn identical_domains_have_zero_distance() {
        let g = GridSpec::unit(16).unwrap();
        let d = build_pixel_domain(g, |p| p[0] + p[1] < 1.2).unwrap();
        assert_eq!(hausdorff_distance(&d, &d).unwrap(), 0.0);
        assert_eq!(char_distance(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn shifted_square() {
        let g = GridSpec::new([0.0, 0.0], 2.0, 64).unwrap();
        let a = build_pixel_domain(g, |p| (0.25..1.25).contains(&p[0]) && (0.5..1.5).contains(&p[1])).unwrap();
        let b = build_pixel_domain(g, |p| (0.5..1.5).contains(&p[0]) && (0.5..1.5).contains(&p[1])).unwrap();
        let d = hausdorff_distance(&a, &b).unwrap();
        assert!((d - 0.25).abs() <= g.h() * 2f64.sqrt(), "d = {d}");
    }

    #[test]
    fn slit_matches_exhaustive_scan() {
        let g = GridSpec::unit(32).unwrap();
        let fam = notch_family(g, &[0.125]).unwrap();
        let full = GridDomain::full_box(g);
        let fast = hausdorff_distance(&fam.members()[0], &full).unwrap();
        let slow = brute_hausdorff(&fam.members()[0], &full);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        assert!(fast <= 0.125 * 2f64.sqrt());
    }

    #[test]
    fn char_distance_cases() {
        let g = GridSpec::unit(8).unwrap();
        let h = g.h();
        let left = build_pixel_domain(g, |p| p[0] < 0.25).unwrap();
        let right = build_pixel_domain(g, |p| p[0] > 0.75).unwrap();
        let d = char_distance(&left, &right).unwrap();
        assert!((d - (left.area() + right.area())).abs() < 1e-15);
        let full = GridDomain::full_box(g);
        let minus_one = build_pixel_domain(g, |p| !(p[0] < h && p[1] < h)).unwrap();
        assert!((char_distance(&full, &minus_one).unwrap() - h * h).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch() {
        let a = GridDomain::full_box(GridSpec::unit(8).unwrap());
        let b = GridDomain::full_box(GridSpec::unit(16).unwrap());
        assert_eq!(hausdorff_distance(&a, &b).unwrap_err(), Error::GridMismatch);
        assert_eq!(char_distance(&a, &b).unwrap_err(), Error::GridMismatch);
    }

    #[test]
    fn boundary_distance_of_square() {
        let g = GridSpec::unit(8).unwrap();
        let d = DistanceField::to_boundary(&GridDomain::full_box(g));
        let h = g.h();
        assert!((d.get(0) - 0.5 * h).abs() < 1e-15);
        assert!((d.get(g.cell_index(3, 3)) - 3.5 * h).abs() < 1e-15);
    }
}
