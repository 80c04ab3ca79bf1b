//! Atomic Borel measures, their regularity audits, and a weak-convergence surrogate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    check_uniform_eps, koch_polygon, GridDomain, GridSpec, SquareFootprint, UniformityReport,
    KOCH_DIMENSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    Boundary,
    Interior,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub pos: [f64; 2],
    pub weight: f64,
}

/// Finite weighted atom set with claimed regularity constants.
///
/// Atoms are kept in lexicographic `(x, y)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureJson", into = "MeasureJson")]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
    kind: SupportKind,
    claimed_d: f64,
    claimed_cd: f64,
    claimed_s: Option<f64>,
    claimed_cs: Option<f64>,
    mass_cap: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureJson {
    atoms: Vec<[f64; 3]>,
    kind: SupportKind,
    d: f64,
    c_d: f64,
    #[serde(default)]
    s: Option<f64>,
    #[serde(default)]
    cs: Option<f64>,
    #[serde(default)]
    mass_cap: Option<f64>,
}

impl TryFrom<MeasureJson> for DiscreteMeasure {
    type Error = Error;
    fn try_from(raw: MeasureJson) -> Result<Self> {
        let atoms = raw.atoms.iter().map(|a| Atom { pos: [a[0], a[1]], weight: a[2] }).collect();
        DiscreteMeasure::new(atoms, raw.kind)?
            .with_upper_claim(raw.d, raw.c_d)?
            .with_lower_claim(raw.s, raw.cs)?
            .with_mass_cap(raw.mass_cap)
    }
}

impl From<DiscreteMeasure> for MeasureJson {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureJson {
            atoms: m.atoms.iter().map(|a| [a.pos[0], a.pos[1], a.weight]).collect(),
            kind: m.kind,
            d: m.claimed_d,
            c_d: m.claimed_cd,
            s: m.claimed_s,
            cs: m.claimed_cs,
            mass_cap: m.mass_cap,
        }
    }
}

impl DiscreteMeasure {
    /// Validates positive finite weights and sorts atoms canonically.
    /// Claims default to `d = 2`, `c_d = π` (planar Lebesgue-like).
    pub fn new(mut atoms: Vec<Atom>, kind: SupportKind) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        for a in &atoms {
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return Err(Error::InvalidMeasure(format!("non-positive weight {}", a.weight)));
            }
            if !(a.pos[0].is_finite() && a.pos[1].is_finite()) {
                return Err(Error::InvalidMeasure("non-finite atom position".into()));
            }
        }
        atoms.sort_by(|a, b| a.pos[0].total_cmp(&b.pos[0]).then(a.pos[1].total_cmp(&b.pos[1])));
        Ok(Self {
            atoms,
            kind,
            claimed_d: 2.0,
            claimed_cd: std::f64::consts::PI,
            claimed_s: None,
            claimed_cs: None,
            mass_cap: None,
        })
    }

    pub fn point(pos: [f64; 2], weight: f64) -> Result<Self> {
        Self::new(vec![Atom { pos, weight }], SupportKind::General)
    }

    pub fn with_upper_claim(mut self, d: f64, c_d: f64) -> Result<Self> {
        if !(d > 0.0 && d <= 2.0) || !(c_d > 0.0) {
            return Err(Error::InvalidMeasure(format!("need d in (0, 2] and c_d > 0, got {d}, {c_d}")));
        }
        self.claimed_d = d;
        self.claimed_cd = c_d;
        Ok(self)
    }

    pub fn with_lower_claim(mut self, s: Option<f64>, cs: Option<f64>) -> Result<Self> {
        if let Some(s) = s {
            if !(1.0..2.0).contains(&s) {
                return Err(Error::InvalidMeasure(format!("need s in [1, 2), got {s}")));
            }
        }
        if let Some(cs) = cs {
            if !(cs > 0.0) {
                return Err(Error::InvalidMeasure(format!("need cs > 0, got {cs}")));
            }
        }
        self.claimed_s = s;
        self.claimed_cs = cs;
        Ok(self)
    }

    pub fn with_mass_cap(mut self, cap: Option<f64>) -> Result<Self> {
        if let Some(c) = cap {
            if self.total_mass() > c {
                return Err(Error::InvalidMeasure(format!(
                    "total mass {} exceeds cap {c}",
                    self.total_mass()
                )));
            }
        }
        self.mass_cap = cap;
        Ok(self)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn kind(&self) -> SupportKind {
        self.kind
    }

    pub fn claimed_d(&self) -> f64 {
        self.claimed_d
    }

    pub fn claimed_cd(&self) -> f64 {
        self.claimed_cd
    }

    pub fn claimed_s(&self) -> Option<f64> {
        self.claimed_s
    }

    pub fn claimed_cs(&self) -> Option<f64> {
        self.claimed_cs
    }

    pub fn mass_cap(&self) -> Option<f64> {
        self.mass_cap
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Same atoms with all weights multiplied by `t > 0`; the mass cap is dropped.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let atoms = self.atoms.iter().map(|a| Atom { pos: a.pos, weight: a.weight * t }).collect();
        let mut m = Self::new(atoms, self.kind)?;
        m.claimed_d = self.claimed_d;
        m.claimed_cd = self.claimed_cd;
        m.claimed_s = self.claimed_s;
        m.claimed_cs = self.claimed_cs;
        Ok(m)
    }

    /// Sum of weights with `|a − x| < r` (open) or `≤ r` (closed).
    pub fn ball_mass(&self, x: [f64; 2], r: f64, closed: bool) -> f64 {
        let lo = self.atoms.partition_point(|a| a.pos[0] < x[0] - r);
        let tol = 1e-12 * r.max(1.0);
        let mut sum = 0.0;
        for a in &self.atoms[lo..] {
            if a.pos[0] > x[0] + r {
                break;
            }
            let d = ((a.pos[0] - x[0]).powi(2) + (a.pos[1] - x[1]).powi(2)).sqrt();
            let hit = if closed { d <= r + tol } else { d < r - tol };
            if hit {
                sum += a.weight;
            }
        }
        sum
    }
}

/// Arc-length measure on the pixel boundary: `atoms_per_cell` equally spaced
/// atoms on every cell edge between an inside cell and an outside cell (or the
/// box boundary), each of weight `h / atoms_per_cell`.
pub fn arc_measure_on_boundary(dom: &GridDomain, atoms_per_cell: usize) -> Result<DiscreteMeasure> {
    if atoms_per_cell == 0 {
        return Err(Error::InvalidMeasure("atoms_per_cell must be positive".into()));
    }
    let g = dom.grid();
    let h = g.h();
    let n = g.cells_per_side();
    let w = h / atoms_per_cell as f64;
    let mut atoms = Vec::new();
    for c in dom.inside_cells() {
        let (i, j) = g.cell_coords(c);
        let outside = |di: isize, dj: isize| {
            let (a, b) = (i as isize + di, j as isize + dj);
            a < 0 || b < 0 || a >= n as isize || b >= n as isize || !dom.inside(g.cell_index(a as usize, b as usize))
        };
        let p0 = g.node_position(i, j);
        // (start, direction) of each edge facing outward
        let edges = [
            ((0, -1), p0, [1.0, 0.0]),
            ((1, 0), [p0[0] + h, p0[1]], [0.0, 1.0]),
            ((0, 1), [p0[0], p0[1] + h], [1.0, 0.0]),
            ((-1, 0), p0, [0.0, 1.0]),
        ];
        for ((di, dj), start, dir) in edges {
            if outside(di, dj) {
                for m in 0..atoms_per_cell {
                    let t = (m as f64 + 0.5) * w;
                    atoms.push(Atom { pos: [start[0] + t * dir[0], start[1] + t * dir[1]], weight: w });
                }
            }
        }
    }
    DiscreteMeasure::new(atoms, SupportKind::Boundary)?
        .with_upper_claim(1.0, 2.0)?
        .with_lower_claim(Some(1.0), Some(1.0))
}

/// Lebesgue-like interior measure: one atom of weight `h²` at each inside cell center.
pub fn lebesgue_measure(dom: &GridDomain) -> Result<DiscreteMeasure> {
    let g = dom.grid();
    let h2 = g.h() * g.h();
    let atoms = dom.inside_cells().map(|c| Atom { pos: g.cell_center(c), weight: h2 }).collect();
    DiscreteMeasure::new(atoms, SupportKind::Interior)
}

/// Atoms of `mu` inside the closed rectangle `[lo, hi]`.
pub fn restrict_to_box(mu: &DiscreteMeasure, lo: [f64; 2], hi: [f64; 2]) -> Result<DiscreteMeasure> {
    let tol = 1e-12;
    let atoms: Vec<Atom> = mu
        .atoms()
        .iter()
        .filter(|a| (0..2).all(|k| a.pos[k] >= lo[k] - tol && a.pos[k] <= hi[k] + tol))
        .copied()
        .collect();
    let mut m = DiscreteMeasure::new(atoms, mu.kind())?;
    m.claimed_d = mu.claimed_d;
    m.claimed_cd = mu.claimed_cd;
    Ok(m)
}

/// Self-similar measure on the level-`level` Koch-square boundary: one atom per
/// segment midpoint, weight `4^-level · side`, total mass `4 · side`.
pub fn self_similar_koch_measure(level: usize, base: SquareFootprint) -> Result<DiscreteMeasure> {
    if level > 7 {
        return Err(Error::InvalidMeasure(format!("Koch measure level {level} exceeds 7")));
    }
    let poly = koch_polygon(level, &base);
    let w = base.side * 0.25f64.powi(level as i32);
    let atoms = (0..poly.len())
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
            Atom { pos: [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])], weight: w }
        })
        .collect();
    DiscreteMeasure::new(atoms, SupportKind::Boundary)?.with_upper_claim(KOCH_DIMENSION, 4.0)
}

/// `{2^-k : k = 1..=k_max}`.
pub fn dyadic_radii(k_max: u32) -> Vec<f64> {
    (1..=k_max).map(|k| 0.5f64.powi(k as i32)).collect()
}

/// Radii from `radii` not below `min_radius`.
pub fn resolved_radii(radii: &[f64], min_radius: f64) -> Vec<f64> {
    radii.iter().copied().filter(|&r| r >= min_radius * (1.0 - 1e-12)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub pass: bool,
    pub worst_center: [f64; 2],
    pub worst_radius: f64,
    /// Upper checks: max `μ(B)/r^d`. Lower checks: min `ν(B̄)/r^s`.
    pub worst_ratio: f64,
}

/// Where upper-regularity balls are centered.
#[derive(Debug, Clone, Copy)]
pub enum Centers<'a> {
    Atoms,
    Grid(&'a GridSpec),
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::EmptyRadii);
    }
    if radii.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidInput("radii must lie in (0, 1]".into()));
    }
    Ok(())
}

/// Audits `μ(B(x, r)) ≤ c_d r^d` on open balls.
pub fn check_upper_regular(
    mu: &DiscreteMeasure,
    d: f64,
    c_d: f64,
    radii: &[f64],
    centers: Centers<'_>,
) -> Result<RegularityReport> {
    check_radii(radii)?;
    let points: Vec<[f64; 2]> = match centers {
        Centers::Atoms => mu.atoms().iter().map(|a| a.pos).collect(),
        Centers::Grid(g) => (0..g.cell_count()).map(|c| g.cell_center(c)).collect(),
    };
    let (ratio, center, radius) = points
        .par_iter()
        .map(|&x| {
            radii
                .iter()
                .map(|&r| (mu.ball_mass(x, r, false) / r.powf(d), x, r))
                .fold((f64::NEG_INFINITY, x, 0.0), |a, b| if b.0 > a.0 { b } else { a })
        })
        .reduce(|| (f64::NEG_INFINITY, [0.0, 0.0], 0.0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(RegularityReport { pass: ratio <= c_d, worst_center: center, worst_radius: radius, worst_ratio: ratio })
}

/// Audits `ν(B̄(x, r)) ≥ cs r^s` on closed balls centered at every atom.
pub fn check_lower_regular(nu: &DiscreteMeasure, s: f64, cs: f64, radii: &[f64]) -> Result<RegularityReport> {
    check_radii(radii)?;
    let (ratio, center, radius) = nu
        .atoms()
        .par_iter()
        .map(|a| {
            radii
                .iter()
                .map(|&r| (nu.ball_mass(a.pos, r, true) / r.powf(s), a.pos, r))
                .fold((f64::INFINITY, a.pos, 0.0), |x, y| if y.0 < x.0 { y } else { x })
        })
        .reduce(|| (f64::INFINITY, [0.0, 0.0], 0.0), |x, y| if y.0 < x.0 { y } else { x });
    Ok(RegularityReport { pass: ratio >= cs, worst_center: center, worst_radius: radius, worst_ratio: ratio })
}

/// Tensor-Chebyshev moments `∫ T_i(x̂) T_j(ŷ) dμ`, `i + j ≤ degree`, with
/// coordinates mapped affinely from the box onto `[-1, 1]²`.
fn chebyshev_moments(mu: &DiscreteMeasure, degree: usize, grid: &GridSpec) -> Vec<f64> {
    let k = degree + 1;
    let mut moments = vec![0.0; k * k];
    let mut tx = vec![0.0; k];
    let mut ty = vec![0.0; k];
    let fill = |t: &mut [f64], x: f64| {
        t[0] = 1.0;
        if t.len() > 1 {
            t[1] = x;
        }
        for m in 2..t.len() {
            t[m] = 2.0 * x * t[m - 1] - t[m - 2];
        }
    };
    let [ox, oy] = grid.origin();
    let side = grid.side();
    for a in mu.atoms() {
        fill(&mut tx, 2.0 * (a.pos[0] - ox) / side - 1.0);
        fill(&mut ty, 2.0 * (a.pos[1] - oy) / side - 1.0);
        for i in 0..k {
            for j in 0..k - i {
                moments[i * k + j] += a.weight * tx[i] * ty[j];
            }
        }
    }
    moments
}

/// Largest `|∫φ dμ₁ − ∫φ dμ₂|` over the tensor-Chebyshev dictionary of total
/// degree at most `degree` on the confinement box; each test function has sup norm 1.
pub fn weak_distance(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, degree: usize, confinement: &GridSpec) -> Result<f64> {
    if degree > 12 {
        return Err(Error::InvalidInput(format!("test degree {degree} exceeds 12")));
    }
    let a = chebyshev_moments(mu1, degree, confinement);
    let b = chebyshev_moments(mu2, degree, confinement);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// `weak_distance` against the zero measure.
pub fn weak_norm(mu: &DiscreteMeasure, degree: usize, confinement: &GridSpec) -> Result<f64> {
    if degree > 12 {
        return Err(Error::InvalidInput(format!("test degree {degree} exceeds 12")));
    }
    Ok(chebyshev_moments(mu, degree, confinement).iter().map(|x| x.abs()).fold(0.0, f64::max))
}

/// Parameters of an admissible class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityParams {
    pub eps: f64,
    pub s: f64,
    pub cs_bar: f64,
    pub c_bar: f64,
    pub d: f64,
    pub c_d: f64,
}

/// Domain with boundary volume `ν` and trace volume `μ`.
#[derive(Debug, Clone)]
pub struct AdmissibleTriple {
    pub label: String,
    pub domain: GridDomain,
    pub boundary_volume: DiscreteMeasure,
    pub trace_volume: DiscreteMeasure,
    pub params: AdmissibilityParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub pass: bool,
    pub total: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub pass: bool,
    /// Required core present (when demanded) and inside the domain.
    pub core_inclusion: bool,
    /// `supp ν` matches the boundary cells to within one cell.
    pub boundary_support: bool,
    /// `supp μ` lies in the closed pixelation.
    pub trace_support: bool,
    pub uniformity: UniformityReport,
    pub lower: RegularityReport,
    pub mass: MassReport,
    pub upper: RegularityReport,
}

/// Sampling used by the uniform-domain falsifier inside [`verify_admissible`].
#[derive(Debug, Clone, Copy)]
pub struct UniformSampling {
    pub pairs: usize,
    pub seed: u64,
    /// Treat a missing required core as a failure.
    pub require_core: bool,
}

impl Default for UniformSampling {
    fn default() -> Self {
        Self { pairs: 200, seed: 0, require_core: false }
    }
}

fn boundary_support_matches(dom: &GridDomain, nu: &DiscreteMeasure) -> bool {
    let g = dom.grid();
    let h = g.h();
    let boundary = dom.boundary_cells();
    let near = |p: [f64; 2], c: usize| {
        let q = g.cell_center(c);
        (p[0] - q[0]).abs().max((p[1] - q[1]).abs()) <= 1.5 * h + 1e-12
    };
    let n = g.cells_per_side() as isize;
    let cell_of = |p: [f64; 2]| -> (isize, isize) {
        let [ox, oy] = g.origin();
        (((p[0] - ox) / h).floor() as isize, ((p[1] - oy) / h).floor() as isize)
    };
    let is_boundary: Vec<bool> = (0..g.cell_count()).map(|c| dom.is_boundary_cell(c)).collect();
    let atoms_ok = nu.atoms().iter().all(|a| {
        let (ci, cj) = cell_of(a.pos);
        (-2..=2).any(|di| {
            (-2..=2).any(|dj| {
                let (i, j) = (ci + di, cj + dj);
                i >= 0 && j >= 0 && i < n && j < n && {
                    let c = g.cell_index(i as usize, j as usize);
                    is_boundary[c] && near(a.pos, c)
                }
            })
        })
    });
    let cells_ok = boundary.iter().all(|&c| {
        let q = g.cell_center(c);
        let lo = nu.atoms().partition_point(|a| a.pos[0] < q[0] - 1.5 * h - 1e-12);
        nu.atoms()[lo..].iter().take_while(|a| a.pos[0] <= q[0] + 1.5 * h + 1e-12).any(|a| near(a.pos, c))
    });
    atoms_ok && cells_ok
}

/// Conjunction of the admissibility sub-checks: core and confinement inclusion,
/// sampled ε-uniformity, support conditions, lower regularity and mass cap on `ν`,
/// upper regularity on `μ`.
pub fn verify_admissible(t: &AdmissibleTriple, radii: &[f64]) -> Result<AdmissibilityReport> {
    verify_admissible_with(t, radii, UniformSampling::default())
}

pub fn verify_admissible_with(
    t: &AdmissibleTriple,
    radii: &[f64],
    sampling: UniformSampling,
) -> Result<AdmissibilityReport> {
    let p = &t.params;
    let core_inclusion = match t.domain.required_core() {
        Some(core) => core.iter().zip(t.domain.mask()).all(|(&c, &i)| !c || i),
        None => !sampling.require_core,
    };
    let uniformity = check_uniform_eps(&t.domain, p.eps, sampling.pairs, sampling.seed);
    let boundary_support = boundary_support_matches(&t.domain, &t.boundary_volume);
    let trace_support = t.trace_volume.atoms().iter().all(|a| t.domain.contains_closed(a.pos));
    let lower = check_lower_regular(&t.boundary_volume, p.s, p.cs_bar, radii)?;
    let total = t.boundary_volume.total_mass();
    let mass = MassReport { pass: total <= p.c_bar, total, cap: p.c_bar };
    let upper = check_upper_regular(&t.trace_volume, p.d, p.c_d, radii, Centers::Atoms)?;
    let pass = core_inclusion
        && uniformity.pass
        && boundary_support
        && trace_support
        && lower.pass
        && mass.pass
        && upper.pass;
    Ok(AdmissibilityReport { pass, core_inclusion, boundary_support, trace_support, uniformity, lower, mass, upper })
}
