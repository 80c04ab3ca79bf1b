//! Weak solutions, energies, resolvents and generalized normal derivatives.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretization::{assemble, AssembledForms, BoxField, DofMap, ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::geometry::GridDomain;
use crate::measures::DiscreteMeasure;
use crate::sparse::{axpy, dot, norm2, Cholesky, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative residual target for conjugate gradients.
    pub tol: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
    /// Solve an incompatible pure Neumann problem after projecting the data.
    pub allow_incompatible: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter_factor: 20, allow_incompatible: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual_norm: f64,
    pub rhs_norm: f64,
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive
/// (semi)definite `a`. With `deflate_constants`, residuals are kept orthogonal
/// to the constant vector, which suits consistent singular systems with that kernel.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    deflate_constants: bool,
) -> Result<(Vec<f64>, CgOutcome)> {
    let n = b.len();
    let rhs_norm = norm2(b);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((x, CgOutcome { iterations: 0, residual_norm: 0.0, rhs_norm }));
    }
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::SingularSystem("nonpositive diagonal entry".into()));
    }
    let deflate = |v: &mut [f64]| {
        if deflate_constants {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    };
    let mut r = b.to_vec();
    deflate(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let target = tol * rhs_norm;
    let mut res = norm2(&r);
    let mut it = 0;
    while res > target {
        if it >= max_iter {
            return Err(Error::NotConverged { iterations: it, residual: res / rhs_norm });
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem(format!("pᵀAp = {pap:e} at iteration {it}")));
        }
        let step = rz / pap;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        deflate(&mut r);
        z.iter_mut().zip(&r).zip(&diag).for_each(|((z, r), d)| *z = r / d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        res = norm2(&r);
        it += 1;
    }
    // report the true residual, not the recursively updated one
    let mut true_r = b.to_vec();
    axpy(-1.0, &a.mul_vec(&x), &mut true_r);
    deflate(&mut true_r);
    Ok((x, CgOutcome { iterations: it, residual_norm: norm2(&true_r), rhs_norm }))
}

/// System matrix of a problem kind on its dof space: `(A + αM + T_γ)` over all
/// dofs (Robin/Neumann, `T_γ = 0` for Neumann) or over the free dofs (Dirichlet).
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    pub matrix: CsrMatrix,
    /// Free dof list for Dirichlet problems; `None` means all dofs.
    pub free: Option<Vec<usize>>,
}

impl SystemMatrix {
    pub fn new(forms: &AssembledForms, kind: ProblemKind, alpha: f64) -> Result<Self> {
        let base = forms.stiffness.add_scaled(&forms.mass, alpha);
        match kind {
            ProblemKind::Dirichlet => {
                let free = forms.free_dofs();
                if free.is_empty() {
                    return Err(Error::ConstraintKillsEverything);
                }
                Ok(Self { matrix: base.principal_submatrix(&free), free: Some(free) })
            }
            ProblemKind::Robin => Ok(Self { matrix: base.add_scaled(&forms.trace_mass, 1.0), free: None }),
            ProblemKind::Neumann => Ok(Self { matrix: base, free: None }),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        match &self.free {
            Some(free) => free.iter().map(|&d| v[d]).collect(),
            None => v.to_vec(),
        }
    }

    pub fn prolong(&self, v: &[f64], n_dof: usize) -> Vec<f64> {
        match &self.free {
            Some(free) => {
                let mut out = vec![0.0; n_dof];
                for (k, &d) in free.iter().enumerate() {
                    out[d] = v[k];
                }
                out
            }
            None => v.to_vec(),
        }
    }
}

/// Nodal weak solution on a domain's dofs.
#[derive(Debug, Clone)]
pub struct WeakSolution {
    pub values: Vec<f64>,
    pub kind: ProblemKind,
    pub alpha: f64,
    /// `E_{α,γ}(u)`.
    pub energy: f64,
    /// `½E(u) − ∫ f u − ∫ φ Tr u dμ`.
    pub objective: f64,
    /// `‖K u − b‖₂` on the solved space.
    pub residual_norm: f64,
    /// `‖b‖₂` on the solved space.
    pub rhs_norm: f64,
    pub iterations: usize,
    pub dofs: Arc<DofMap>,
}

impl WeakSolution {
    pub fn n_dof(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        self.dofs.grid().h()
    }

    /// Value at the grid node nearest to `p`, if it is a dof.
    pub fn value_at(&self, p: [f64; 2]) -> Option<f64> {
        let g = self.dofs.grid();
        let [ox, oy] = g.origin();
        let i = ((p[0] - ox) / g.h()).round();
        let j = ((p[1] - oy) / g.h()).round();
        if i < 0.0 || j < 0.0 || i as usize > g.cells_per_side() || j as usize > g.cells_per_side() {
            return None;
        }
        self.dofs.dof_of(g.node_index(i as usize, j as usize)).map(|d| self.values[d])
    }
}

pub fn solve(dom: &GridDomain, mu: &DiscreteMeasure, spec: &ProblemSpec) -> Result<WeakSolution> {
    solve_with(dom, mu, spec, &SolveOptions::default())
}

pub fn solve_with(dom: &GridDomain, mu: &DiscreteMeasure, spec: &ProblemSpec, opts: &SolveOptions) -> Result<WeakSolution> {
    spec.validate(mu)?;
    let forms = assemble(dom, mu, &spec.trace_gamma())?;
    solve_assembled(dom, &forms, spec, opts)
}

/// Solves with forms already assembled for `spec.trace_gamma()`.
pub fn solve_assembled(
    dom: &GridDomain,
    forms: &AssembledForms,
    spec: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<WeakSolution> {
    let n = forms.n_dof();
    let load = forms.load_vector(dom, &spec.source);
    let bnd = forms.boundary_load(&spec.phi);
    let mut rhs: Vec<f64> = load.iter().zip(&bnd).map(|(a, b)| a + b).collect();
    let singular = spec.kind == ProblemKind::Neumann && spec.alpha == 0.0;
    if singular {
        let defect: f64 = rhs.iter().sum();
        let scale: f64 = load.iter().map(|v| v.abs()).sum::<f64>() + bnd.iter().map(|v| v.abs()).sum::<f64>();
        let tolerance = 1e-8 * scale;
        if defect.abs() > tolerance && !opts.allow_incompatible {
            return Err(Error::IncompatibleNeumann { defect, tolerance });
        }
        let m1 = forms.mass.mul_vec(&vec![1.0; n]);
        let area: f64 = m1.iter().sum();
        axpy(-defect / area, &m1, &mut rhs);
    }
    let sys = SystemMatrix::new(forms, spec.kind, spec.alpha)?;
    let b = sys.restrict(&rhs);
    let (x, outcome) = pcg(&sys.matrix, &b, opts.tol, opts.max_iter_factor * sys.dim(), singular)?;
    let mut values = sys.prolong(&x, n);
    if singular {
        let m1 = forms.mass.mul_vec(&vec![1.0; n]);
        let mean = dot(&m1, &values) / m1.iter().sum::<f64>();
        values.iter_mut().for_each(|v| *v -= mean);
    }
    let energy = form_value(forms, spec.kind, spec.alpha, &values);
    let objective = 0.5 * energy - dot(&rhs, &values);
    Ok(WeakSolution {
        values,
        kind: spec.kind,
        alpha: spec.alpha,
        energy,
        objective,
        residual_norm: outcome.residual_norm,
        rhs_norm: outcome.rhs_norm,
        iterations: outcome.iterations,
        dofs: forms.dofs.clone(),
    })
}

/// `uᵀ(A + αM + T_γ)u` with `T_γ` only for Robin problems.
pub fn form_value(forms: &AssembledForms, kind: ProblemKind, alpha: f64, u: &[f64]) -> f64 {
    let mut e = forms.stiffness.quad_form(u) + alpha * forms.mass.quad_form(u);
    if kind == ProblemKind::Robin {
        e += forms.trace_mass.quad_form(u);
    }
    e
}

/// Value of the energy functional: finite on the discrete space, a marker otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyValue {
    Finite(f64),
    /// Vector on another dof map, or violating the Dirichlet constraint.
    NotInSpace,
}

impl EnergyValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            EnergyValue::Finite(e) => Some(e),
            EnergyValue::NotInSpace => None,
        }
    }
}

/// Energy functional `J(Ω, μ)` at the nodal vector `u` given on `dofs`.
pub fn energy_of(forms: &AssembledForms, spec: &ProblemSpec, dofs: &DofMap, u: &[f64]) -> EnergyValue {
    if dofs != forms.dofs.as_ref() || u.len() != forms.n_dof() {
        return EnergyValue::NotInSpace;
    }
    if spec.kind == ProblemKind::Dirichlet && forms.constrained_dofs().iter().any(|&d| u[d] != 0.0) {
        return EnergyValue::NotInSpace;
    }
    EnergyValue::Finite(form_value(forms, spec.kind, spec.alpha, u))
}

/// `J(Ω, μ)(u)`; errors with `DofMismatch` when `u` lives on another dof map.
pub fn energy(dom: &GridDomain, mu: &DiscreteMeasure, spec: &ProblemSpec, u: &WeakSolution) -> Result<EnergyValue> {
    let forms = assemble(dom, mu, &spec.trace_gamma())?;
    if u.dofs.as_ref() != forms.dofs.as_ref() {
        return Err(Error::DofMismatch { expected: forms.n_dof(), found: u.n_dof() });
    }
    Ok(energy_of(&forms, spec, &u.dofs, &u.values))
}

/// Factorized `(A + αM + T_γ)` on a domain, applied as `P_Ω Ĝ_α P_Ω` on `L²(D)`.
#[derive(Debug)]
pub struct Resolvent {
    dom: GridDomain,
    dofs: Arc<DofMap>,
    mass: CsrMatrix,
    system: SystemMatrix,
    chol: Cholesky,
}

impl Resolvent {
    /// `kind`/`gamma` from `spec`; `alpha` replaces `spec.alpha`.
    pub fn new(dom: &GridDomain, mu: &DiscreteMeasure, spec: &ProblemSpec, alpha: f64) -> Result<Self> {
        let spec = ProblemSpec { alpha, ..spec.clone() };
        spec.validate(mu)?;
        if spec.kind == ProblemKind::Neumann && alpha == 0.0 {
            return Err(Error::InvalidProblem("Neumann resolvent needs alpha > 0".into()));
        }
        let forms = assemble(dom, mu, &spec.trace_gamma())?;
        Self::from_forms(dom, &forms, spec.kind, alpha)
    }

    pub fn from_forms(dom: &GridDomain, forms: &AssembledForms, kind: ProblemKind, alpha: f64) -> Result<Self> {
        let system = SystemMatrix::new(forms, kind, alpha)?;
        let chol = Cholesky::new(&system.matrix)?;
        Ok(Self { dom: dom.clone(), dofs: forms.dofs.clone(), mass: forms.mass.clone(), system, chol })
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    /// Solves `K u = b` for a right-hand side on the domain's dofs.
    pub fn solve_dofs(&self, b: &[f64]) -> Vec<f64> {
        let x = self.chol.solve(&self.system.restrict(b));
        self.system.prolong(&x, self.dofs.len())
    }

    /// Zero continuation of the solution with source `P_Ω g`.
    pub fn apply_field(&self, g: &BoxField) -> BoxField {
        let b = g.load_on(&self.dom, &self.dofs);
        BoxField::from_domain(&self.dom, &self.dofs, &self.solve_dofs(&b))
    }

    /// Box-nodal version: the output equals `u` at the domain's dofs and zero
    /// elsewhere, and stands for the zero continuation of `u`.
    pub fn apply_nodal(&self, g: &[f64]) -> Vec<f64> {
        let gd = self.dofs.restrict_from_box(g);
        let b = self.mass.mul_vec(&gd);
        self.dofs.extend_to_box(&self.solve_dofs(&b))
    }
}

/// `P_Ω ∘ Ĝ_α` applied to a box-nodal `g` (see [`Resolvent::apply_nodal`]).
pub fn resolvent_apply(
    dom: &GridDomain,
    mu: &DiscreteMeasure,
    spec: &ProblemSpec,
    alpha: f64,
    g: &[f64],
) -> Result<Vec<f64>> {
    if g.len() != dom.grid().node_count() {
        return Err(Error::DofMismatch { expected: dom.grid().node_count(), found: g.len() });
    }
    Ok(Resolvent::new(dom, mu, spec, alpha)?.apply_nodal(g))
}

/// Linear functional `ψ ↦ ⟨∂u/∂n_Γ, ψ⟩` on values at the atoms.
#[derive(Debug, Clone)]
pub struct NormalDerivative {
    /// `A u + α M u − F`: pairing against a nodal extension `e` is `eᵀ·flux`.
    flux: Vec<f64>,
    extension: Extension,
}

#[derive(Debug, Clone)]
struct Extension {
    trace_map: CsrMatrix,
    /// Dofs touched by atoms, then the remaining ones.
    touched: Vec<usize>,
    interior: Vec<usize>,
    gram: Arc<Cholesky>,
    interior_solver: Option<Arc<Cholesky>>,
    coupling: CsrMatrix,
}

impl Extension {
    fn new(forms: &AssembledForms) -> Result<Self> {
        let touched = forms.constrained_dofs();
        let interior = forms.free_dofs();
        let n = forms.n_dof();
        let rc = column_restrict(&forms.trace_map, &touched, n);
        // (R_cᵀ R_c + δ I) e_c = R_cᵀ ψ gives the minimum-norm matching field as δ → 0
        let mut gram_trip = Vec::new();
        for k in 0..rc.nrows() {
            let (cols, vals) = rc.row(k);
            for (&a, &va) in cols.iter().zip(vals) {
                for (&b, &vb) in cols.iter().zip(vals) {
                    gram_trip.push((a, b, va * vb));
                }
            }
        }
        for d in 0..touched.len() {
            gram_trip.push((d, d, 1e-12));
        }
        let gram = CsrMatrix::from_triplets(touched.len(), touched.len(), gram_trip);
        let am = forms.stiffness.add_scaled(&forms.mass, 1.0);
        let interior_solver = if interior.is_empty() {
            None
        } else {
            Some(Arc::new(Cholesky::new(&am.principal_submatrix(&interior))?))
        };
        let coupling = block(&am, &interior, &touched);
        Ok(Self {
            trace_map: rc,
            touched,
            interior,
            gram: Arc::new(Cholesky::new(&gram)?),
            interior_solver,
            coupling,
        })
    }

    /// `(A + M)`-harmonic nodal extension of atom values `psi`.
    fn extend(&self, psi: &[f64], n: usize) -> Vec<f64> {
        let rhs = self.trace_map.transpose().mul_vec(psi);
        let ec = self.gram.solve(&rhs);
        let mut e = vec![0.0; n];
        for (k, &d) in self.touched.iter().enumerate() {
            e[d] = ec[k];
        }
        if let Some(solver) = &self.interior_solver {
            let b: Vec<f64> = self.coupling.mul_vec(&ec).iter().map(|v| -v).collect();
            let ei = solver.solve(&b);
            for (k, &d) in self.interior.iter().enumerate() {
                e[d] = ei[k];
            }
        }
        e
    }
}

/// Columns `cols` of `m` (renumbered).
fn column_restrict(m: &CsrMatrix, cols: &[usize], n: usize) -> CsrMatrix {
    let mut map = vec![usize::MAX; n];
    for (k, &c) in cols.iter().enumerate() {
        map[c] = k;
    }
    let trip = m.triplets().filter(|t| map[t.1] != usize::MAX).map(|(r, c, v)| (r, map[c], v)).collect();
    CsrMatrix::from_triplets(m.nrows(), cols.len(), trip)
}

/// Block `m[rows, cols]`.
fn block(m: &CsrMatrix, rows: &[usize], cols: &[usize]) -> CsrMatrix {
    let mut map = vec![usize::MAX; m.ncols()];
    for (k, &c) in cols.iter().enumerate() {
        map[c] = k;
    }
    let mut trip = Vec::new();
    for (k, &r) in rows.iter().enumerate() {
        let (cs, vs) = m.row(r);
        for (&c, &v) in cs.iter().zip(vs) {
            if map[c] != usize::MAX {
                trip.push((k, map[c], v));
            }
        }
    }
    CsrMatrix::from_triplets(rows.len(), cols.len(), trip)
}

impl NormalDerivative {
    /// Pairing with atom values `psi`, via the `(A + M)`-harmonic extension.
    pub fn pairing(&self, psi: &[f64]) -> f64 {
        let e = self.extension.extend(psi, self.flux.len());
        dot(&e, &self.flux)
    }

    /// Pairing with an explicit nodal extension `e`.
    pub fn pairing_nodal(&self, e: &[f64]) -> f64 {
        dot(e, &self.flux)
    }
}

/// Normal derivative of nodal `u` for the data in `spec`, without checking that
/// `u` solves the problem. Uses `Δu = αu − f` on `Ω`.
pub fn normal_derivative_of(
    dom: &GridDomain,
    forms: &AssembledForms,
    spec: &ProblemSpec,
    u: &[f64],
) -> Result<NormalDerivative> {
    let load = forms.load_vector(dom, &spec.source);
    let mut flux = forms.stiffness.mul_vec(u);
    axpy(spec.alpha, &forms.mass.mul_vec(u), &mut flux);
    axpy(-1.0, &load, &mut flux);
    Ok(NormalDerivative { flux, extension: Extension::new(forms)? })
}

/// Normal derivative of a weak solution; rejects vectors whose residual exceeds
/// `1e-8` relative.
pub fn normal_derivative(
    dom: &GridDomain,
    mu: &DiscreteMeasure,
    spec: &ProblemSpec,
    u: &WeakSolution,
) -> Result<NormalDerivative> {
    let forms = assemble(dom, mu, &spec.trace_gamma())?;
    if u.dofs.as_ref() != forms.dofs.as_ref() {
        return Err(Error::DofMismatch { expected: forms.n_dof(), found: u.n_dof() });
    }
    let sys = SystemMatrix::new(&forms, spec.kind, spec.alpha)?;
    let rhs: Vec<f64> = forms
        .load_vector(dom, &spec.source)
        .iter()
        .zip(forms.boundary_load(&spec.phi))
        .map(|(a, b)| a + b)
        .collect();
    let b = sys.restrict(&rhs);
    let mut r = sys.matrix.mul_vec(&sys.restrict(&u.values));
    axpy(-1.0, &b, &mut r);
    if spec.kind == ProblemKind::Neumann && spec.alpha == 0.0 {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter_mut().for_each(|v| *v -= m);
    }
    let residual = norm2(&r) / norm2(&b).max(f64::MIN_POSITIVE);
    if residual > 1e-8 && norm2(&b) > 0.0 {
        return Err(Error::NotASolution { residual });
    }
    normal_derivative_of(dom, &forms, spec, &u.values)
}

/// JSON sidecar of a solution CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSidecar {
    pub kind: ProblemKind,
    pub alpha: f64,
    pub energy: f64,
    pub objective: f64,
    pub residual_norm: f64,
    pub n_dof: usize,
    pub h: f64,
}

impl From<&WeakSolution> for SolutionSidecar {
    fn from(u: &WeakSolution) -> Self {
        Self {
            kind: u.kind,
            alpha: u.alpha,
            energy: u.energy,
            objective: u.objective,
            residual_norm: u.residual_norm,
            n_dof: u.n_dof(),
            h: u.h(),
        }
    }
}

/// `node_x,node_y,value` rows in dof order.
pub fn write_nodal_csv(mut w: impl Write, dofs: &DofMap, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "node_x,node_y,value")?;
    for (d, v) in values.iter().enumerate() {
        let p = dofs.position(d);
        writeln!(w, "{},{},{}", p[0], p[1], v)?;
    }
    Ok(())
}

pub fn write_solution_csv(w: impl Write, u: &WeakSolution) -> std::io::Result<()> {
    write_nodal_csv(w, &u.dofs, &u.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Field;
    use crate::geometry::{build_pixel_domain, GridSpec};
    use crate::measures::arc_measure_on_boundary;

    fn square(n: usize) -> (GridDomain, DiscreteMeasure) {
        let dom = GridDomain::full_box(GridSpec::unit(n).unwrap());
        let mu = arc_measure_on_boundary(&dom, 1).unwrap();
        (dom, mu)
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (dom, mu) = square(8);
        for spec in [
            ProblemSpec::dirichlet(Field::default()),
            ProblemSpec::robin(Field::constant(1.0), Field::default()),
            ProblemSpec::neumann(Field::default()),
        ] {
            let u = solve(&dom, &mu, &spec).unwrap();
            assert!(u.values.iter().all(|&v| v == 0.0));
            assert_eq!(u.energy, 0.0);
        }
    }

    #[test]
    fn dirichlet_vanishes_on_constraint_and_pcg_matches_cholesky() {
        let (dom, mu) = square(16);
        let spec = ProblemSpec::dirichlet(Field::constant(1.0));
        let u = solve(&dom, &mu, &spec).unwrap();
        let forms = assemble(&dom, &mu, &Field::default()).unwrap();
        assert!(forms.constrained_dofs().iter().all(|&d| u.values[d] == 0.0));
        assert!(u.residual_norm <= 1e-10 * u.rhs_norm);
        let r = Resolvent::from_forms(&dom, &forms, ProblemKind::Dirichlet, 0.0).unwrap();
        let direct = r.solve_dofs(&forms.load_vector(&dom, &spec.source));
        for (a, b) in u.values.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn neumann_compatibility_and_mean_zero() {
        let (dom, mu) = square(16);
        let bad = ProblemSpec::neumann(Field::constant(1.0));
        assert!(matches!(solve(&dom, &mu, &bad), Err(Error::IncompatibleNeumann { .. })));
        let good = ProblemSpec::neumann(Field::SinSin { amp: 1.0, kx: 2.0, ky: 1.0 });
        let u = solve(&dom, &mu, &good).unwrap();
        let forms = assemble(&dom, &mu, &Field::default()).unwrap();
        let mean = dot(&forms.mass.mul_vec(&vec![1.0; u.n_dof()]), &u.values);
        assert!(mean.abs() < 1e-10);
        let forced = solve_with(&dom, &mu, &bad, &SolveOptions { allow_incompatible: true, ..Default::default() }).unwrap();
        assert!(forced.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn robin_requires_positive_gamma_without_alpha() {
        let (dom, mu) = square(8);
        let spec = ProblemSpec::robin(Field::default(), Field::constant(1.0));
        assert!(matches!(solve(&dom, &mu, &spec), Err(Error::InvalidProblem(_))));
        assert!(solve(&dom, &mu, &spec.with_alpha(1.0)).is_ok());
    }

    #[test]
    fn dirichlet_everywhere_constrained() {
        let g = GridSpec::unit(8).unwrap();
        let dom = build_pixel_domain(g, |p| p[0] < 0.25 && p[1] < 0.25).unwrap();
        let mu = arc_measure_on_boundary(&dom, 1).unwrap();
        let mut atoms = mu.atoms().to_vec();
        atoms.push(crate::measures::Atom { pos: [0.125, 0.125], weight: 0.1 });
        let mu = DiscreteMeasure::new(atoms, crate::measures::SupportKind::General).unwrap();
        let spec = ProblemSpec::dirichlet(Field::constant(1.0));
        assert_eq!(solve(&dom, &mu, &spec).unwrap_err(), Error::ConstraintKillsEverything);
    }

    #[test]
    fn energy_identity_and_markers() {
        let (dom, mu) = square(16);
        let spec = ProblemSpec::robin(Field::constant(1.0), Field::constant(1.0));
        let u = solve(&dom, &mu, &spec).unwrap();
        // E(u) = ∫ f u for f ≡ 1, φ ≡ 0, by midpoint quadrature of the bilinear field
        let g = dom.grid();
        let integral: f64 = dom
            .inside_cells()
            .map(|c| u.dofs.cell_dofs(c).iter().map(|&d| u.values[d]).sum::<f64>() / 4.0 * g.h() * g.h())
            .sum();
        assert!((u.energy - integral).abs() < 1e-9 * integral);
        assert!((u.objective + 0.5 * u.energy).abs() < 1e-9);
        let other = square(8);
        let v = solve(&other.0, &other.1, &spec).unwrap();
        assert!(matches!(energy(&dom, &mu, &spec, &v), Err(Error::DofMismatch { .. })));
        let forms = assemble(&dom, &mu, &Field::default()).unwrap();
        assert_eq!(energy_of(&forms, &spec, &v.dofs, &v.values), EnergyValue::NotInSpace);
        let c = vec![2.0; forms.n_dof()];
        let neumann = ProblemSpec::neumann(Field::default());
        assert!(energy_of(&forms, &neumann, &forms.dofs, &c).finite().unwrap().abs() < 1e-10);
        let zero = vec![0.0; forms.n_dof()];
        assert_eq!(energy_of(&forms, &spec, &forms.dofs, &zero), EnergyValue::Finite(0.0));
    }

    #[test]
    fn resolvent_kills_outside_sources_and_large_alpha_limit() {
        let g = GridSpec::unit(16).unwrap();
        let dom = build_pixel_domain(g, |p| p[0] < 0.5).unwrap();
        let mu = arc_measure_on_boundary(&dom, 1).unwrap();
        let spec = ProblemSpec::robin(Field::constant(1.0), Field::default());
        let outside: Vec<f64> = (0..g.node_count())
            .map(|v| {
                let (i, j) = g.node_coords(v);
                if g.node_position(i, j)[0] > 0.6 { 1.0 } else { 0.0 }
            })
            .collect();
        let out = resolvent_apply(&dom, &mu, &spec, 1.0, &outside).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let smooth: Vec<f64> = (0..g.node_count())
            .map(|v| {
                let (i, j) = g.node_coords(v);
                let p = g.node_position(i, j);
                (3.0 * p[0]).sin() * (2.0 * p[1]).cos()
            })
            .collect();
        let alpha = 1e6;
        let r = Resolvent::new(&dom, &mu, &spec, alpha).unwrap();
        let gf = BoxField::from_nodal(g, &smooth);
        let out = r.apply_field(&gf);
        let target = gf.masked(&dom);
        let scaled = BoxField::from_flat(g, &out.to_flat().iter().map(|v| v * alpha).collect::<Vec<_>>());
        assert!(scaled.sub(&target).norm() < 1e-3);
    }

    #[test]
    fn normal_derivative_of_linear_field_has_zero_flux() {
        let (dom, mu) = square(16);
        let forms = assemble(&dom, &mu, &Field::default()).unwrap();
        let u = forms.dofs.interpolate(|p| p[0]);
        let spec = ProblemSpec::neumann(Field::default());
        let nd = normal_derivative_of(&dom, &forms, &spec, &u).unwrap();
        assert!(nd.pairing(&vec![1.0; mu.len()]).abs() < 1e-12);
    }

    #[test]
    fn normal_derivative_rejects_non_solutions() {
        let (dom, mu) = square(8);
        let spec = ProblemSpec::robin(Field::constant(1.0), Field::constant(1.0));
        let mut u = solve(&dom, &mu, &spec).unwrap();
        u.values[40] += 1.0;
        assert!(matches!(normal_derivative(&dom, &mu, &spec, &u), Err(Error::NotASolution { .. })));
    }

    #[test]
    fn csv_and_sidecar() {
        let (dom, mu) = square(4);
        let u = solve(&dom, &mu, &ProblemSpec::dirichlet(Field::constant(1.0))).unwrap();
        let mut buf = Vec::new();
        write_solution_csv(&mut buf, &u).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert!(text.starts_with("node_x,node_y,value\n0,0,0\n"));
        let side = SolutionSidecar::from(&u);
        let json = serde_json::to_string(&side).unwrap();
        assert!(json.contains("\"kind\":\"dirichlet\""));
        assert!(json.contains("\"n_dof\":25"));
    }
}
