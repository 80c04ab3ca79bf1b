//! Bilinear elements on the inside cells of a pixel domain: stiffness, mass,
//! trace coupling, loads, and the `L²(D)` representation used for projections.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridDomain, GridSpec};
use crate::measures::DiscreteMeasure;
use crate::sparse::CsrMatrix;

/// Local stiffness of a square bilinear element (independent of `h` in 2-D),
/// corners ordered counter-clockwise from the lower left.
pub const STIFFNESS_ELEMENT: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Local mass of a unit square bilinear element; scale by `h²`.
pub const MASS_ELEMENT: [[f64; 4]; 4] = [
    [4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0, 1.0 / 36.0],
    [1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0, 2.0 / 36.0],
    [2.0 / 36.0, 1.0 / 36.0, 2.0 / 36.0, 4.0 / 36.0],
];

/// Grid node indices of the corners of cell `(i, j)`, counter-clockwise.
pub fn cell_corner_nodes(grid: &GridSpec, cell: usize) -> [usize; 4] {
    let (i, j) = grid.cell_coords(cell);
    [
        grid.node_index(i, j),
        grid.node_index(i + 1, j),
        grid.node_index(i + 1, j + 1),
        grid.node_index(i, j + 1),
    ]
}

/// Degrees of freedom: grid vertices touching at least one inside cell, in
/// increasing grid-node order.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    grid: GridSpec,
    nodes: Vec<usize>,
    index: Vec<usize>,
    boundary: Vec<bool>,
}

pub fn build_dofs(dom: &GridDomain) -> DofMap {
    let g = *dom.grid();
    let mut incidence = vec![0u8; g.node_count()];
    for c in dom.inside_cells() {
        for v in cell_corner_nodes(&g, c) {
            incidence[v] += 1;
        }
    }
    let mut index = vec![usize::MAX; g.node_count()];
    let mut nodes = Vec::new();
    let mut boundary = Vec::new();
    for (v, &k) in incidence.iter().enumerate() {
        if k > 0 {
            index[v] = nodes.len();
            nodes.push(v);
            boundary.push(k < 4);
        }
    }
    DofMap { grid: g, nodes, index, boundary }
}

impl DofMap {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Grid node index of each dof.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        let d = self.index[node];
        (d != usize::MAX).then_some(d)
    }

    pub fn is_boundary(&self, dof: usize) -> bool {
        self.boundary[dof]
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn position(&self, dof: usize) -> [f64; 2] {
        let (i, j) = self.grid.node_coords(self.nodes[dof]);
        self.grid.node_position(i, j)
    }

    /// Dofs of the corners of an inside cell.
    pub fn cell_dofs(&self, cell: usize) -> [usize; 4] {
        cell_corner_nodes(&self.grid, cell).map(|v| self.index[v])
    }

    /// Nodal values of `f` at every dof.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|d| f(self.position(d))).collect()
    }

    /// Box-nodal vector with this map's values in place and zeros elsewhere.
    pub fn extend_to_box(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.node_count()];
        for (d, &v) in self.nodes.iter().enumerate() {
            out[v] = values[d];
        }
        out
    }

    /// Values of a box-nodal vector at this map's dofs.
    pub fn restrict_from_box(&self, values: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&v| values[v]).collect()
    }
}

/// User-supplied scalar field.
#[derive(Clone)]
pub struct FieldFn(pub Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>);

impl fmt::Debug for FieldFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FieldFn(..)")
    }
}

impl PartialEq for FieldFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Scalar function on the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Field {
    Constant { value: f64 },
    /// `c + gx·x + gy·y`.
    Affine { c: f64, gx: f64, gy: f64 },
    /// `amp · sin(kx π x) · sin(ky π y)`.
    SinSin { amp: f64, kx: f64, ky: f64 },
    #[serde(skip)]
    Custom(FieldFn),
}

impl Default for Field {
    fn default() -> Self {
        Field::Constant { value: 0.0 }
    }
}

impl Field {
    pub fn constant(value: f64) -> Self {
        Field::Constant { value }
    }

    pub fn custom(f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Field::Custom(FieldFn(Arc::new(f)))
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        match self {
            Field::Constant { value } => *value,
            Field::Affine { c, gx, gy } => c + gx * p[0] + gy * p[1],
            Field::SinSin { amp, kx, ky } => amp * (kx * PI * p[0]).sin() * (ky * PI * p[1]).sin(),
            Field::Custom(f) => (f.0)(p),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Field::Constant { value } if *value == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Dirichlet,
    Robin,
    Neumann,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Dirichlet => "dirichlet",
            ProblemKind::Robin => "robin",
            ProblemKind::Neumann => "neumann",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Boundary-condition kind and data. `gamma` is only read for Robin problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub gamma: Field,
    #[serde(default)]
    pub source: Field,
    #[serde(default)]
    pub phi: Field,
}

impl ProblemSpec {
    pub fn dirichlet(source: Field) -> Self {
        Self { kind: ProblemKind::Dirichlet, alpha: 0.0, gamma: Field::default(), source, phi: Field::default() }
    }

    pub fn robin(gamma: Field, source: Field) -> Self {
        Self { kind: ProblemKind::Robin, alpha: 0.0, gamma, source, phi: Field::default() }
    }

    pub fn neumann(source: Field) -> Self {
        Self { kind: ProblemKind::Neumann, alpha: 0.0, gamma: Field::default(), source, phi: Field::default() }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_phi(mut self, phi: Field) -> Self {
        self.phi = phi;
        self
    }

    /// Effective `γ` for the trace term: zero unless Robin.
    pub fn trace_gamma(&self) -> Field {
        match self.kind {
            ProblemKind::Robin => self.gamma.clone(),
            _ => Field::default(),
        }
    }

    /// Checks `α ≥ 0`, `γ ≥ 0` at the atoms, coercivity of Robin problems with
    /// `α = 0`, and homogeneous Dirichlet data.
    pub fn validate(&self, mu: &DiscreteMeasure) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidProblem(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        match self.kind {
            ProblemKind::Robin => {
                let min = mu.atoms().iter().map(|a| self.gamma.eval(a.pos)).fold(f64::INFINITY, f64::min);
                if !(min >= 0.0) {
                    return Err(Error::InvalidProblem(format!("gamma must be nonnegative, found {min}")));
                }
                if self.alpha == 0.0 && min <= 0.0 {
                    return Err(Error::InvalidProblem(
                        "Robin problem with alpha = 0 needs gamma bounded away from zero".into(),
                    ));
                }
            }
            ProblemKind::Dirichlet => {
                if mu.atoms().iter().any(|a| self.phi.eval(a.pos) != 0.0) {
                    return Err(Error::InvalidProblem("nonzero Dirichlet data is not supported".into()));
                }
            }
            ProblemKind::Neumann => {}
        }
        Ok(())
    }
}

/// Discrete form `uᵀ(A + αM + T_γ)u` on a domain's dofs.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub dofs: Arc<DofMap>,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub trace_mass: CsrMatrix,
    /// Bilinear interpolation at the atoms: rows are atoms, columns dofs.
    pub trace_map: CsrMatrix,
    pub atom_weights: Vec<f64>,
    pub atom_positions: Vec<[f64; 2]>,
    pub gamma_at_atoms: Vec<f64>,
}

fn snap(t: f64) -> f64 {
    if t.abs() < 1e-9 {
        0.0
    } else if (1.0 - t).abs() < 1e-9 {
        1.0
    } else {
        t
    }
}

/// Assembles `A`, `M`, `R` and `T_γ = Rᵀ diag(γ(xᵢ) wᵢ) R`.
pub fn assemble(dom: &GridDomain, mu: &DiscreteMeasure, gamma: &Field) -> Result<AssembledForms> {
    let g = *dom.grid();
    let dofs = build_dofs(dom);
    let n = dofs.len();
    let h2 = g.h() * g.h();
    let cells: Vec<usize> = dom.inside_cells().collect();
    let local: Vec<([usize; 4], usize)> = cells.iter().map(|&c| (dofs.cell_dofs(c), c)).collect();
    let build = |element: &[[f64; 4]; 4], scale: f64| {
        let trip: Vec<(usize, usize, f64)> = local
            .par_iter()
            .flat_map_iter(|(d, _)| {
                (0..16).map(move |k| (d[k / 4], d[k % 4], scale * element[k / 4][k % 4]))
            })
            .collect();
        CsrMatrix::from_triplets(n, n, trip)
    };
    let stiffness = build(&STIFFNESS_ELEMENT, 1.0);
    let mass = build(&MASS_ELEMENT, h2);

    let mut r_trip = Vec::with_capacity(4 * mu.len());
    let h = g.h();
    let [ox, oy] = g.origin();
    for (k, a) in mu.atoms().iter().enumerate() {
        let cell = dom
            .containing_cell(a.pos)
            .ok_or(Error::AtomOutsideDomain { index: k, x: a.pos[0], y: a.pos[1] })?;
        let (i, j) = g.cell_coords(cell);
        let xi = snap(((a.pos[0] - ox) / h - i as f64).clamp(0.0, 1.0));
        let eta = snap(((a.pos[1] - oy) / h - j as f64).clamp(0.0, 1.0));
        let shape = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta];
        for (d, s) in dofs.cell_dofs(cell).into_iter().zip(shape) {
            if s != 0.0 {
                r_trip.push((k, d, s));
            }
        }
    }
    let trace_map = CsrMatrix::from_triplets(mu.len(), n, r_trip);
    let atom_weights: Vec<f64> = mu.atoms().iter().map(|a| a.weight).collect();
    let atom_positions: Vec<[f64; 2]> = mu.atoms().iter().map(|a| a.pos).collect();
    let gamma_at_atoms: Vec<f64> = atom_positions.iter().map(|&p| gamma.eval(p)).collect();
    let trace_mass = weighted_gram(&trace_map, &atom_weights, &gamma_at_atoms);
    Ok(AssembledForms {
        dofs: Arc::new(dofs),
        stiffness,
        mass,
        trace_mass,
        trace_map,
        atom_weights,
        atom_positions,
        gamma_at_atoms,
    })
}

/// `Rᵀ diag(wᵢ cᵢ) R`.
fn weighted_gram(r: &CsrMatrix, w: &[f64], c: &[f64]) -> CsrMatrix {
    let mut trip = Vec::new();
    for k in 0..r.nrows() {
        let s = w[k] * c[k];
        if s == 0.0 {
            continue;
        }
        let (cols, vals) = r.row(k);
        for (&a, &va) in cols.iter().zip(vals) {
            for (&b, &vb) in cols.iter().zip(vals) {
                trip.push((a, b, s * va * vb));
            }
        }
    }
    CsrMatrix::from_triplets(r.ncols(), r.ncols(), trip)
}

impl AssembledForms {
    pub fn n_dof(&self) -> usize {
        self.dofs.len()
    }

    pub fn h(&self) -> f64 {
        self.dofs.grid().h()
    }

    /// Same forms with the trace term rebuilt for another `γ`.
    pub fn with_gamma(&self, gamma: &Field) -> Self {
        let gamma_at_atoms: Vec<f64> = self.atom_positions.iter().map(|&p| gamma.eval(p)).collect();
        let trace_mass = weighted_gram(&self.trace_map, &self.atom_weights, &gamma_at_atoms);
        Self { gamma_at_atoms, trace_mass, ..self.clone() }
    }

    /// `Rᵀ W R`, the unweighted-by-γ trace Gram matrix.
    pub fn trace_gram(&self) -> CsrMatrix {
        weighted_gram(&self.trace_map, &self.atom_weights, &vec![1.0; self.atom_weights.len()])
    }

    /// Dofs with a nonzero column in `R`, eliminated for Dirichlet problems.
    pub fn constrained_dofs(&self) -> Vec<usize> {
        let mut hit = vec![false; self.n_dof()];
        for (_, c, v) in self.trace_map.triplets() {
            if v != 0.0 {
                hit[c] = true;
            }
        }
        (0..self.n_dof()).filter(|&d| hit[d]).collect()
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        let constrained = self.constrained_dofs();
        let mut mask = vec![true; self.n_dof()];
        for d in constrained {
            mask[d] = false;
        }
        (0..self.n_dof()).filter(|&d| mask[d]).collect()
    }

    /// Midpoint-rule load `∫ f v`: each inside cell adds `f(center) h²/4` to its corners.
    pub fn load_vector(&self, dom: &GridDomain, f: &Field) -> Vec<f64> {
        let g = dom.grid();
        let q = g.h() * g.h() / 4.0;
        let mut b = vec![0.0; self.n_dof()];
        for c in dom.inside_cells() {
            let v = q * f.eval(g.cell_center(c));
            for d in self.dofs.cell_dofs(c) {
                b[d] += v;
            }
        }
        b
    }

    /// `Rᵀ W φ(xᵢ)`.
    pub fn boundary_load(&self, phi: &Field) -> Vec<f64> {
        let wphi: Vec<f64> = self
            .atom_positions
            .iter()
            .zip(&self.atom_weights)
            .map(|(&p, &w)| w * phi.eval(p))
            .collect();
        self.trace_map.transpose().mul_vec(&wphi)
    }

    /// `R u`, the values at the atoms.
    pub fn trace_values(&self, u: &[f64]) -> Vec<f64> {
        self.trace_map.mul_vec(u)
    }

    /// `Rᵀ W 1`, the functional `u ↦ ∫ Tr u dμ`.
    pub fn trace_mean_functional(&self) -> Vec<f64> {
        self.trace_map.transpose().mul_vec(&self.atom_weights)
    }
}

/// `∫_Ω f dx + Σ wᵢ φ(xᵢ)` (midpoint rule for `f`).
pub fn compatibility_defect(dom: &GridDomain, mu: &DiscreteMeasure, spec: &ProblemSpec) -> f64 {
    let g = dom.grid();
    let h2 = g.h() * g.h();
    let interior: f64 = dom.inside_cells().map(|c| spec.source.eval(g.cell_center(c)) * h2).sum();
    let boundary: f64 = mu.atoms().iter().map(|a| a.weight * spec.phi.eval(a.pos)).sum();
    interior + boundary
}

/// Zeroes the box-nodal coefficients at nodes touching no inside cell.
pub fn project_onto_domain(v: &[f64], dom: &GridDomain) -> Vec<f64> {
    let g = dom.grid();
    assert_eq!(v.len(), g.node_count());
    let mut keep = vec![false; g.node_count()];
    for c in dom.inside_cells() {
        for node in cell_corner_nodes(g, c) {
            keep[node] = true;
        }
    }
    v.iter().zip(&keep).map(|(&x, &k)| if k { x } else { 0.0 }).collect()
}

/// Piecewise-bilinear function on the box, discontinuous across cells: four
/// corner values per cell. Carries `L²(D)` including zero continuations, so
/// `P_Ω` is exact cell masking.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxField {
    grid: GridSpec,
    values: Vec<[f64; 4]>,
}

impl BoxField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![[0.0; 4]; grid.cell_count()] }
    }

    /// Continuous bilinear interpolant of box-nodal values.
    pub fn from_nodal(grid: GridSpec, nodal: &[f64]) -> Self {
        assert_eq!(nodal.len(), grid.node_count());
        let values = (0..grid.cell_count()).map(|c| cell_corner_nodes(&grid, c).map(|v| nodal[v])).collect();
        Self { grid, values }
    }

    /// Zero continuation of a nodal field on a domain's dofs.
    pub fn from_domain(dom: &GridDomain, dofs: &DofMap, u: &[f64]) -> Self {
        let mut out = Self::zeros(*dom.grid());
        for c in dom.inside_cells() {
            out.values[c] = dofs.cell_dofs(c).map(|d| u[d]);
        }
        out
    }

    pub fn from_flat(grid: GridSpec, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 4 * grid.cell_count());
        let values = flat.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        Self { grid, values }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cell_values(&self, cell: usize) -> [f64; 4] {
        self.values[cell]
    }

    pub fn dim(&self) -> usize {
        4 * self.values.len()
    }

    /// `P_Ω`: zero on cells outside `dom`.
    pub fn masked(&self, dom: &GridDomain) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(c, v)| if dom.inside(c) { *v } else { [0.0; 4] })
            .collect();
        Self { grid: self.grid, values }
    }

    /// `∫_D f g`.
    pub fn inner(&self, other: &BoxField) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| element_bilinear(a, b) * h2)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    pub fn sub(&self, other: &BoxField) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]])
            .collect();
        Self { grid: self.grid, values }
    }

    /// `Sᵀ M g` on a domain's dofs: `∫_Ω g φ_d` for every dof `d`.
    pub fn load_on(&self, dom: &GridDomain, dofs: &DofMap) -> Vec<f64> {
        let h2 = self.grid.h() * self.grid.h();
        let mut b = vec![0.0; dofs.len()];
        for c in dom.inside_cells() {
            let v = &self.values[c];
            for (a, d) in dofs.cell_dofs(c).into_iter().enumerate() {
                b[d] += h2 * (0..4).map(|k| MASS_ELEMENT[a][k] * v[k]).sum::<f64>();
            }
        }
        b
    }
}

/// `aᵀ M_e b` on the unit square.
fn element_bilinear(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    (0..4).map(|i| a[i] * (0..4).map(|k| MASS_ELEMENT[i][k] * b[k]).sum::<f64>()).sum()
}

/// `L²(D)` inner product of two flat [`BoxField`] vectors on `grid`.
pub fn box_inner(grid: &GridSpec, a: &[f64], b: &[f64]) -> f64 {
    let h2 = grid.h() * grid.h();
    a.chunks_exact(4)
        .zip(b.chunks_exact(4))
        .map(|(x, y)| element_bilinear(&[x[0], x[1], x[2], x[3]], &[y[0], y[1], y[2], y[3]]) * h2)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_pixel_domain;
    use crate::measures::{arc_measure_on_boundary, lebesgue_measure};
    use proptest::prelude::*;

    fn square(n: usize) -> (GridDomain, DiscreteMeasure) {
        let dom = GridDomain::full_box(GridSpec::unit(n).unwrap());
        let mu = arc_measure_on_boundary(&dom, 1).unwrap();
        (dom, mu)
    }

    #[test]
    fn dof_counts() {
        let g = GridSpec::unit(8).unwrap();
        let one = build_pixel_domain(g, |p| p[0] < 0.125 && p[1] < 0.125).unwrap();
        let d = build_dofs(&one);
        assert_eq!((d.len(), d.boundary_count()), (4, 4));
        let block = build_pixel_domain(g, |p| p[0] < 0.25 && p[1] < 0.25).unwrap();
        let d = build_dofs(&block);
        assert_eq!((d.len(), d.boundary_count()), (9, 8));
        assert_eq!(build_dofs(&GridDomain::full_box(g)).len(), 81);
    }

    #[test]
    fn constants_and_linears() {
        let g = GridSpec::unit(16).unwrap();
        let dom = build_pixel_domain(g, |p| p[0] + 0.5 * p[1] < 0.9).unwrap();
        let mu = arc_measure_on_boundary(&dom, 2).unwrap();
        let gamma = Field::custom(|p| 1.0 + p[0]);
        let f = assemble(&dom, &mu, &gamma).unwrap();
        let c = vec![3.0; f.n_dof()];
        assert!(f.stiffness.quad_form(&c).abs() < 1e-12);
        assert!((f.mass.quad_form(&c) - 9.0 * dom.area()).abs() < 1e-12);
        let gamma_int: f64 = mu.atoms().iter().map(|a| a.weight * gamma.eval(a.pos)).sum();
        assert!((f.trace_mass.quad_form(&c) - 9.0 * gamma_int).abs() < 1e-10);
        let x = f.dofs.interpolate(|p| p[0]);
        assert!((f.stiffness.quad_form(&x) - dom.area()).abs() < 1e-12);
    }

    #[test]
    fn trace_mass_matches_direct_sum() {
        let (dom, mu) = square(32);
        let f = assemble(&dom, &mu, &Field::constant(1.0)).unwrap();
        let trace: f64 = f.trace_mass.diagonal().iter().sum();
        let direct: f64 = (0..mu.len())
            .map(|k| {
                let (_, vals) = f.trace_map.row(k);
                mu.atoms()[k].weight * vals.iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        assert!((trace - direct).abs() < 1e-14);
    }

    #[test]
    fn matrices_are_symmetric_and_kernel_is_constants() {
        let (dom, mu) = square(8);
        let f = assemble(&dom, &mu, &Field::constant(2.0)).unwrap();
        assert_eq!(f.stiffness.asymmetry(), 0.0);
        assert_eq!(f.mass.asymmetry(), 0.0);
        assert!(f.trace_mass.asymmetry() < 1e-16);
        // rows of A sum to zero
        assert!(f.stiffness.mul_vec(&vec![1.0; f.n_dof()]).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn atoms_outside_are_rejected() {
        let g = GridSpec::unit(8).unwrap();
        let dom = build_pixel_domain(g, |p| p[0] < 0.5).unwrap();
        let mu = DiscreteMeasure::point([0.75, 0.5], 1.0).unwrap();
        assert!(matches!(assemble(&dom, &mu, &Field::default()), Err(Error::AtomOutsideDomain { index: 0, .. })));
    }

    #[test]
    fn edge_atoms_touch_two_dofs() {
        let (dom, mu) = square(8);
        let f = assemble(&dom, &mu, &Field::default()).unwrap();
        for k in 0..mu.len() {
            let (cols, vals) = f.trace_map.row(k);
            assert_eq!(cols.len(), 2);
            assert!(vals.iter().all(|&v| v == 0.5));
        }
        assert_eq!(f.constrained_dofs().len(), 32);
    }

    #[test]
    fn refinement_error_is_second_order() {
        use std::f64::consts::PI;
        // exact Dirichlet energy of sin(πx) sin(πy) on the unit square is π²/2
        let err = |n: usize| {
            let dom = GridDomain::full_box(GridSpec::unit(n).unwrap());
            let d = build_dofs(&dom);
            let f = assemble(&dom, &lebesgue_measure(&dom).unwrap(), &Field::default()).unwrap();
            let u = d.interpolate(|p| (PI * p[0]).sin() * (PI * p[1]).sin());
            (f.stiffness.quad_form(&u) - PI * PI / 2.0).abs()
        };
        let (e1, e2) = (err(16), err(32));
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "observed order {order}");
    }

    #[test]
    fn compatibility_defect_cases() {
        let (dom, mu) = square(16);
        assert_eq!(compatibility_defect(&dom, &mu, &ProblemSpec::neumann(Field::default())), 0.0);
        let one = compatibility_defect(&dom, &mu, &ProblemSpec::neumann(Field::constant(1.0)));
        assert!((one - 1.0).abs() < 1e-12);
        // mean of x over the pixel domain, from double-resolution quadrature
        let g = GridSpec::unit(32).unwrap();
        let fine = build_pixel_domain(g, |p| p[1] < 0.5 || p[0] < 0.5).unwrap();
        let coarse = build_pixel_domain(*dom.grid(), |p| p[1] < 0.5 || p[0] < 0.5).unwrap();
        let mean = fine.inside_cells().map(|c| g.cell_center(c)[0]).sum::<f64>() / fine.inside_count() as f64;
        let spec = ProblemSpec::neumann(Field::Affine { c: -mean, gx: 1.0, gy: 0.0 });
        let mu_c = arc_measure_on_boundary(&coarse, 1).unwrap();
        let h = dom.grid().h();
        assert!(compatibility_defect(&coarse, &mu_c, &spec).abs() <= h * h);
    }

    #[test]
    fn projection_is_idempotent() {
        let g = GridSpec::unit(8).unwrap();
        let full = GridDomain::full_box(g);
        let half = build_pixel_domain(g, |p| p[0] < 0.5).unwrap();
        let ones = vec![1.0; g.node_count()];
        assert_eq!(project_onto_domain(&ones, &full), ones);
        let p = project_onto_domain(&ones, &half);
        assert_eq!(project_onto_domain(&p, &half), p);
        let kept = p.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(kept, 5 * 9);
    }

    #[test]
    fn box_field_inner_matches_mass() {
        let g = GridSpec::unit(8).unwrap();
        let dom = GridDomain::full_box(g);
        let f = assemble(&dom, &lebesgue_measure(&dom).unwrap(), &Field::default()).unwrap();
        let a: Vec<f64> = (0..g.node_count()).map(|k| (k as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..g.node_count()).map(|k| (k as f64 * 0.11).cos()).collect();
        let fa = BoxField::from_nodal(g, &a);
        let fb = BoxField::from_nodal(g, &b);
        assert!((fa.inner(&fb) - f.mass.bilinear(&a, &b)).abs() < 1e-12);
        assert!((fa.load_on(&dom, &f.dofs).iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() - fa.inner(&fb)).abs() < 1e-12);
    }

    #[test]
    fn field_json() {
        let f: Field = serde_json::from_str(r#"{"type":"constant","value":1.5}"#).unwrap();
        assert_eq!(f, Field::constant(1.5));
        assert!(serde_json::from_str::<Field>(r#"{"type":"constant","value":1,"x":2}"#).is_err());
        let spec: ProblemSpec = serde_json::from_str(r#"{"kind":"robin","gamma":{"type":"constant","value":1},"source":{"type":"constant","value":1}}"#).unwrap();
        assert_eq!(spec.kind, ProblemKind::Robin);
        assert!(spec.phi.is_zero());
    }

    proptest! {
        #[test]
        fn galerkin_consistency(coef in proptest::collection::vec(-2.0f64..2.0, 8)) {
            // globally bilinear fields are represented exactly
            let g = GridSpec::unit(6).unwrap();
            let dom = build_pixel_domain(g, |p| p[0] < 0.7 || p[1] < 0.4).unwrap();
            let f = assemble(&dom, &lebesgue_measure(&dom).unwrap(), &Field::default()).unwrap();
            let (a, b) = (&coef[..4], &coef[4..]);
            let u = f.dofs.interpolate(|p| a[0] + a[1] * p[0] + a[2] * p[1] + a[3] * p[0] * p[1]);
            let v = f.dofs.interpolate(|p| b[0] + b[1] * p[0] + b[2] * p[1] + b[3] * p[0] * p[1]);
            // exact integrals over each cell by 3x3 Gauss quadrature
            let gp = [0.5 - 0.5 * (0.6f64).sqrt(), 0.5, 0.5 + 0.5 * (0.6f64).sqrt()];
            let gw = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
            let h = g.h();
            let (mut mass, mut stiff) = (0.0, 0.0);
            for c in dom.inside_cells() {
                let o = g.node_position(g.cell_coords(c).0, g.cell_coords(c).1);
                for (x, wx) in gp.iter().zip(gw) {
                    for (y, wy) in gp.iter().zip(gw) {
                        let p = [o[0] + x * h, o[1] + y * h];
                        let uv = (a[0] + a[1] * p[0] + a[2] * p[1] + a[3] * p[0] * p[1])
                            * (b[0] + b[1] * p[0] + b[2] * p[1] + b[3] * p[0] * p[1]);
                        let grad = (a[1] + a[3] * p[1]) * (b[1] + b[3] * p[1]) + (a[2] + a[3] * p[0]) * (b[2] + b[3] * p[0]);
                        mass += wx * wy * h * h * uv;
                        stiff += wx * wy * h * h * grad;
                    }
                }
            }
            prop_assert!((f.mass.bilinear(&u, &v) - mass).abs() < 1e-12);
            prop_assert!((f.stiffness.bilinear(&u, &v) - stiff).abs() < 1e-11);
        }

        #[test]
        fn trace_mass_monotone_in_gamma(u in proptest::collection::vec(-1.0f64..1.0, 81), s in 0.0f64..3.0) {
            let (dom, mu) = square(8);
            let f1 = assemble(&dom, &mu, &Field::custom(|p| p[0])).unwrap();
            let f2 = f1.with_gamma(&Field::custom(move |p| p[0] + s));
            let a = f1.trace_mass.quad_form(&u);
            prop_assert!(a >= -1e-14);
            prop_assert!(a <= f2.trace_mass.quad_form(&u) + 1e-14);
        }
    }
}
