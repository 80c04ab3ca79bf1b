//! Eigenpairs of the discrete pencils, spectral projectors, operator-norm
//! estimates and Poincaré / equivalent-norm constants.

use std::io::Write;
use std::sync::Arc;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{assemble, AssembledForms, DofMap, Field, ProblemKind};
use crate::error::{Error, Result};
use crate::geometry::GridDomain;
use crate::measures::DiscreteMeasure;
use crate::sparse::{axpy, dot, norm2, Cholesky, CsrMatrix};

/// Largest system solved with the dense fallback under [`EigenMethod::Auto`].
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    #[default]
    Auto,
    Lanczos,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub method: EigenMethod,
    pub seed: u64,
    /// Relative Ritz residual at which a pair counts as converged.
    pub tol: f64,
    pub max_restarts: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { method: EigenMethod::Auto, seed: 0, tol: 1e-10, max_restarts: 60 }
    }
}

/// Lowest eigenpairs of `(A + T_γ) φ = λ M φ` on a problem kind's space.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// M-orthonormal, on the full dof map (zero on eliminated Dirichlet dofs).
    pub eigenvectors: Vec<Vec<f64>>,
    /// `‖(A + T_γ)φ − λMφ‖₂` per pair.
    pub residuals: Vec<f64>,
    pub kind: ProblemKind,
    pub count: usize,
    pub mass: Arc<CsrMatrix>,
    pub dofs: Arc<DofMap>,
}

impl SpectralData {
    /// `⟨x, y⟩_M` on the full dof map.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mass.bilinear(x, y)
    }

    /// `index,eigenvalue,residual` with 1-based indices.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "index,eigenvalue,residual")?;
        for (k, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            writeln!(w, "{},{},{}", k + 1, l, r)?;
        }
        Ok(())
    }
}

pub fn eigensolve(
    dom: &GridDomain,
    mu: &DiscreteMeasure,
    kind: ProblemKind,
    gamma: &Field,
    count: usize,
) -> Result<SpectralData> {
    eigensolve_with(dom, mu, kind, gamma, count, &EigenOptions::default())
}

pub fn eigensolve_with(
    dom: &GridDomain,
    mu: &DiscreteMeasure,
    kind: ProblemKind,
    gamma: &Field,
    count: usize,
    opts: &EigenOptions,
) -> Result<SpectralData> {
    let gamma = if kind == ProblemKind::Robin { gamma.clone() } else { Field::default() };
    let forms = assemble(dom, mu, &gamma)?;
    eigensolve_forms(&forms, kind, count, opts)
}

/// Eigensolve with forms assembled for the intended `γ` (ignored unless Robin).
pub fn eigensolve_forms(forms: &AssembledForms, kind: ProblemKind, count: usize, opts: &EigenOptions) -> Result<SpectralData> {
    let n_full = forms.n_dof();
    let mut stiff = forms.stiffness.clone();
    if kind == ProblemKind::Robin {
        stiff = stiff.add_scaled(&forms.trace_mass, 1.0);
    }
    let free = match kind {
        ProblemKind::Dirichlet => {
            let free = forms.free_dofs();
            if free.is_empty() {
                return Err(Error::ConstraintKillsEverything);
            }
            Some(free)
        }
        _ => None,
    };
    let (s, m) = match &free {
        Some(f) => (stiff.principal_submatrix(f), forms.mass.principal_submatrix(f)),
        None => (stiff, forms.mass.clone()),
    };
    let n = s.nrows();
    if count == 0 || count > n {
        return Err(Error::InvalidInput(format!("count {count} outside 1..={n}")));
    }
    let dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    let (values, mut vectors) = if dense {
        dense_lowest(&s, &m, count)?
    } else {
        let k = s.add_scaled(&m, 1.0);
        let chol = Cholesky::new(&k)?;
        let op = |x: &[f64]| chol.solve(&m.mul_vec(x));
        let pencil = Pencil { op: &op, top: &m, bottom: &k, project: None };
        let (theta, vecs) = largest_pairs(&pencil, count, opts)?;
        (theta.iter().map(|t| 1.0 / t - 1.0).collect(), vecs)
    };
    let mut residuals = Vec::with_capacity(count);
    for (l, v) in values.iter().zip(vectors.iter_mut()) {
        let norm = m.quad_form(v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        fix_sign(v);
        let mut r = s.mul_vec(v);
        axpy(-l, &m.mul_vec(v), &mut r);
        residuals.push(norm2(&r));
    }
    let eigenvectors = vectors
        .into_iter()
        .map(|v| match &free {
            Some(f) => {
                let mut out = vec![0.0; n_full];
                for (k, &d) in f.iter().enumerate() {
                    out[d] = v[k];
                }
                out
            }
            None => v,
        })
        .collect();
    Ok(SpectralData {
        eigenvalues: values,
        eigenvectors,
        residuals,
        kind,
        count,
        mass: Arc::new(forms.mass.clone()),
        dofs: forms.dofs.clone(),
    })
}

/// Largest-magnitude entry positive; first such entry on ties.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best * (1.0 + 1e-9) {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn to_dense(a: &CsrMatrix) -> Mat<f64> {
    let mut d = Mat::zeros(a.nrows(), a.ncols());
    for (r, c, v) in a.triplets() {
        d[(r, c)] = v;
    }
    d
}

/// Lowest `count` pairs of `S x = λ M x` by `M = LLᵀ` and `L⁻¹ S L⁻ᵀ`.
fn dense_lowest(s: &CsrMatrix, m: &CsrMatrix, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = s.nrows();
    let md = to_dense(m);
    let llt = md.llt(Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let l = llt.L();
    let mut x = to_dense(s);
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut c = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let eig = c.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let vals = eig.S().column_vector();
    let mut y = eig.U().subcols(0, count).to_owned();
    l.transpose().solve_upper_triangular_in_place(y.as_mut());
    let values = (0..count).map(|k| vals[k]).collect();
    let vectors = (0..count).map(|k| (0..n).map(|i| y[(i, k)]).collect()).collect();
    Ok((values, vectors))
}

/// Pencil `top x = θ bottom x` with `op = bottom⁻¹ top`, self-adjoint in the
/// `bottom` inner product. `project` maps onto an invariant subspace of `op`.
struct Pencil<'a> {
    op: &'a dyn Fn(&[f64]) -> Vec<f64>,
    top: &'a CsrMatrix,
    bottom: &'a CsrMatrix,
    project: Option<&'a dyn Fn(&mut [f64])>,
}

const KRYLOV_STEPS: usize = 5;

/// Largest `count` pairs of a pencil by explicitly restarted block Lanczos with
/// full reorthogonalization in the `bottom` inner product.
fn largest_pairs(p: &Pencil, count: usize, opts: &EigenOptions) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = p.top.nrows();
    let block = (count + 3).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if let Some(proj) = p.project {
                proj(&mut v);
            }
            v
        })
        .collect();
    for _ in 0..opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut bbasis: Vec<Vec<f64>> = Vec::new();
        let mut current = orthonormalize_into(p, start, &mut basis, &mut bbasis);
        for _ in 0..KRYLOV_STEPS {
            if current.is_empty() || basis.len() >= n {
                break;
            }
            let next: Vec<Vec<f64>> = current
                .iter()
                .map(|&k| {
                    let mut w = (p.op)(&basis[k]);
                    if let Some(proj) = p.project {
                        proj(&mut w);
                    }
                    w
                })
                .collect();
            current = orthonormalize_into(p, next, &mut basis, &mut bbasis);
        }
        let k = basis.len();
        if k < count {
            return Err(Error::InvalidInput(format!("invariant subspace of dimension {k} below count {count}")));
        }
        let tbasis: Vec<Vec<f64>> = basis.iter().map(|v| p.top.mul_vec(v)).collect();
        let h = Mat::from_fn(k, k, |i, j| 0.5 * (dot(&basis[i], &tbasis[j]) + dot(&basis[j], &tbasis[i])));
        let eig = h.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let vals = eig.S().column_vector();
        let u = eig.U();
        let keep = block.min(k);
        let mut thetas = Vec::with_capacity(keep);
        let mut ritz = Vec::with_capacity(keep);
        let mut converged = true;
        for r in 0..keep {
            let col = k - 1 - r;
            let theta = vals[col];
            let mut x = vec![0.0; n];
            for (j, v) in basis.iter().enumerate() {
                axpy(u[(j, col)], v, &mut x);
            }
            if r < count {
                // ‖op x − θ x‖_bottom with x bottom-normalized
                let mut w = (p.op)(&x);
                if let Some(proj) = p.project {
                    proj(&mut w);
                }
                axpy(-theta, &x, &mut w);
                let res = p.bottom.quad_form(&w).max(0.0).sqrt();
                if res > opts.tol * theta.abs().max(f64::MIN_POSITIVE) {
                    converged = false;
                }
            }
            thetas.push(theta);
            ritz.push(x);
        }
        if converged {
            thetas.truncate(count);
            ritz.truncate(count);
            return Ok((thetas, ritz));
        }
        start = ritz;
    }
    Err(Error::ConvergenceFailure { restarts: opts.max_restarts })
}

/// Appends the bottom-orthonormalized `vectors` to `basis`; returns their
/// indices. Vectors that collapse under orthogonalization are dropped; the
/// survivors are projected again so cancellation cannot leave the subspace.
fn orthonormalize_into(
    p: &Pencil,
    vectors: Vec<Vec<f64>>,
    basis: &mut Vec<Vec<f64>>,
    bbasis: &mut Vec<Vec<f64>>,
) -> Vec<usize> {
    let b = p.bottom;
    let mut added = Vec::new();
    for mut w in vectors {
        let initial = b.quad_form(&w).max(0.0).sqrt();
        if initial == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for (v, bv) in basis.iter().zip(bbasis.iter()) {
                let c = dot(bv, &w);
                axpy(-c, v, &mut w);
            }
            if let Some(proj) = p.project {
                proj(&mut w);
            }
        }
        let bw = b.mul_vec(&w);
        let norm = dot(&w, &bw).max(0.0).sqrt();
        if norm <= 1e-12 * initial {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        added.push(basis.len());
        basis.push(w);
        bbasis.push(bw.into_iter().map(|x| x / norm).collect());
    }
    added
}

/// `Φ Φᵀ M` for the eigenvectors with eigenvalue in `(a, b)`.
#[derive(Debug, Clone)]
pub struct SpectralProjector {
    /// Columns of the rank factor `Φ`.
    pub vectors: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    mass: Arc<CsrMatrix>,
}

impl SpectralProjector {
    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mx = self.mass.mul_vec(x);
        let mut out = vec![0.0; x.len()];
        for v in &self.vectors {
            axpy(dot(v, &mx), v, &mut out);
        }
        out
    }
}

pub fn spectral_projector(sd: &SpectralData, a: f64, b: f64) -> Result<SpectralProjector> {
    if !(a < b) {
        return Err(Error::InvalidInput(format!("empty interval ({a}, {b})")));
    }
    for &l in &sd.eigenvalues {
        for endpoint in [a, b] {
            if (l - endpoint).abs() <= 1e-6 {
                return Err(Error::IntervalCutsEigenvalue { endpoint, eigenvalue: l });
            }
        }
    }
    let top = sd.eigenvalues.last().copied().unwrap_or(f64::NEG_INFINITY);
    if b > top {
        return Err(Error::InsufficientCount { count: sd.count });
    }
    let (eigenvalues, vectors) = sd
        .eigenvalues
        .iter()
        .zip(&sd.eigenvectors)
        .filter(|(&l, _)| a < l && l < b)
        .map(|(&l, v)| (l, v.clone()))
        .unzip();
    Ok(SpectralProjector { vectors, eigenvalues, mass: sd.mass.clone() })
}

/// Lower bound for `‖apply1 − apply2‖` in the norm of `inner`, by power
/// iteration on the squared difference: 3 seeded restarts of `iters` steps,
/// maximum square-rooted Rayleigh quotient.
pub fn op_norm_diff(
    apply1: impl Fn(&[f64]) -> Vec<f64>,
    apply2: impl Fn(&[f64]) -> Vec<f64>,
    inner: impl Fn(&[f64], &[f64]) -> f64,
    dim: usize,
    iters: usize,
    seed: u64,
) -> f64 {
    let diff = |x: &[f64]| {
        let mut y = apply1(x);
        axpy(-1.0, &apply2(x), &mut y);
        y
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..3 {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..iters.max(1) {
            let xx = inner(&x, &x);
            if !(xx > 0.0) {
                break;
            }
            let dx = diff(&x);
            best = best.max((inner(&dx, &dx) / xx).max(0.0).sqrt());
            let ddx = diff(&dx);
            let norm = inner(&ddx, &ddx).max(0.0).sqrt();
            if norm == 0.0 {
                break;
            }
            x = ddx.into_iter().map(|v| v / norm).collect();
        }
    }
    best
}

/// `C = 1/√λ` for the smallest `λ` of `uᵀAu / uᵀMu` over `∫ Tr u dμ = 0`.
pub fn poincare_constant(dom: &GridDomain, mu: &DiscreteMeasure) -> Result<f64> {
    poincare_constant_with(dom, mu, &EigenOptions::default())
}

pub fn poincare_constant_with(dom: &GridDomain, mu: &DiscreteMeasure, opts: &EigenOptions) -> Result<f64> {
    let forms = assemble(dom, mu, &Field::default())?;
    let m = forms.trace_mean_functional();
    if m.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateConstraint);
    }
    let k = forms.stiffness.add_scaled(&forms.mass, 1.0);
    let chol = Cholesky::new(&k)?;
    let q = chol.solve(&m);
    let mq = dot(&m, &q);
    // K-orthogonal projection onto ker mᵀ along K⁻¹m
    let project = |y: &mut [f64]| {
        let c = dot(&m, y) / mq;
        axpy(-c, &q, y);
    };
    let op = |x: &[f64]| {
        let mut y = chol.solve(&forms.mass.mul_vec(x));
        project(&mut y);
        y
    };
    let pencil = Pencil { op: &op, top: &forms.mass, bottom: &k, project: Some(&project) };
    let (theta, _) = largest_pairs(&pencil, 1, opts)?;
    let lambda = 1.0 / theta[0] - 1.0;
    if !(lambda > 0.0) {
        return Err(Error::DegenerateConstraint);
    }
    Ok(1.0 / lambda.sqrt())
}

/// Norm-comparison constants between `‖u‖²_{W^{1,2}} = uᵀ(A + M)u` and
/// `uᵀ(A + RᵀWR)u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivNormConstants {
    /// Smallest eigenvalue of `(A + M) x = κ (A + RᵀWR) x`.
    pub kappa_min: f64,
    pub kappa_max: f64,
    /// `1/√κ_max`.
    pub c_lower: f64,
    /// `1/√κ_min`.
    pub c_upper: f64,
}

pub fn equiv_norm_constants(dom: &GridDomain, mu: &DiscreteMeasure) -> Result<EquivNormConstants> {
    equiv_norm_constants_with(dom, mu, &EigenOptions::default())
}

pub fn equiv_norm_constants_with(dom: &GridDomain, mu: &DiscreteMeasure, opts: &EigenOptions) -> Result<EquivNormConstants> {
    let forms = assemble(dom, mu, &Field::default())?;
    if forms.trace_mean_functional().iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateConstraint);
    }
    let p = forms.stiffness.add_scaled(&forms.mass, 1.0);
    let q = forms.stiffness.add_scaled(&forms.trace_gram(), 1.0);
    let pc = Cholesky::new(&p)?;
    let qc = Cholesky::new(&q).map_err(|_| Error::DegenerateConstraint)?;
    let op_max = |x: &[f64]| qc.solve(&p.mul_vec(x));
    let (hi, _) = largest_pairs(&Pencil { op: &op_max, top: &p, bottom: &q, project: None }, 1, opts)?;
    let op_min = |x: &[f64]| pc.solve(&q.mul_vec(x));
    let (lo_inv, _) = largest_pairs(&Pencil { op: &op_min, top: &q, bottom: &p, project: None }, 1, opts)?;
    let kappa_max = hi[0];
    let kappa_min = 1.0 / lo_inv[0];
    Ok(EquivNormConstants {
        kappa_min,
        kappa_max,
        c_lower: 1.0 / kappa_max.sqrt(),
        c_upper: 1.0 / kappa_min.sqrt(),
    })
}
