//! Solver and eigensolver results against closed-form and dense oracles.

use std::f64::consts::PI;

use faer::{Mat, Side};
use roughbvp::discretization::{assemble, Field, ProblemKind, ProblemSpec};
use roughbvp::geometry::{GridDomain, GridSpec};
use roughbvp::measures::{arc_measure_on_boundary, lebesgue_measure, Atom, DiscreteMeasure, SupportKind};
use roughbvp::solver::solve;
use roughbvp::spectral::{eigensolve, eigensolve_with, equiv_norm_constants, poincare_constant, EigenMethod, EigenOptions};

fn unit_square(n: usize) -> (GridDomain, DiscreteMeasure) {
    let dom = GridDomain::full_box(GridSpec::unit(n).unwrap());
    let mu = arc_measure_on_boundary(&dom, 1).unwrap();
    (dom, mu)
}

/// `u(½,½)` for `−Δu = 1` on the unit square with zero boundary values.
fn fourier_center_value() -> f64 {
    let mut s = 0.0;
    for j in (1..4000).step_by(2) {
        for k in (1..4000).step_by(2) {
            let sj = if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let sk = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let (jf, kf) = (j as f64, k as f64);
            s += sj * sk / (jf * kf * (jf * jf + kf * kf));
        }
    }
    16.0 / PI.powi(4) * s
}

#[test]
fn fourier_oracle_value() {
    assert!((fourier_center_value() - 0.073671).abs() < 1e-5);
}

#[test]
fn dirichlet_center_value_at_n128() {
    let (dom, mu) = unit_square(128);
    let u = solve(&dom, &mu, &ProblemSpec::dirichlet(Field::constant(1.0))).unwrap();
    let center = u.value_at([0.5, 0.5]).unwrap();
    assert!((center - fourier_center_value()).abs() < 1e-3, "center {center}");
}

#[test]
fn dirichlet_eigenvalues_at_n128() {
    let (dom, mu) = unit_square(128);
    let sd = eigensolve(&dom, &mu, ProblemKind::Dirichlet, &Field::default(), 3).unwrap();
    let exact = [2.0 * PI * PI, 5.0 * PI * PI, 5.0 * PI * PI];
    for (l, e) in sd.eigenvalues.iter().zip(exact) {
        assert!((l - e).abs() < 0.01 * e, "{l} vs {e}");
    }
    for (l, r) in sd.eigenvalues.iter().zip(&sd.residuals) {
        assert!(*r <= 1e-7 * (1.0 + l));
    }
}

#[test]
fn neumann_second_eigenvalue_is_pi_squared() {
    let (dom, mu) = unit_square(64);
    let sd = eigensolve(&dom, &mu, ProblemKind::Neumann, &Field::default(), 2).unwrap();
    assert!(sd.eigenvalues[0].abs() < 1e-9);
    assert!((sd.eigenvalues[1] - PI * PI).abs() < 0.01 * PI * PI);
}

#[test]
fn poincare_lebesgue_is_inverse_pi() {
    let (dom, _) = unit_square(128);
    let mu = lebesgue_measure(&dom).unwrap();
    let c = poincare_constant(&dom, &mu).unwrap();
    assert!((c - 1.0 / PI).abs() < 0.02 / PI, "{c}");
}

#[test]
fn poincare_lebesgue_matches_neumann_gap() {
    let (dom, _) = unit_square(24);
    let mu = lebesgue_measure(&dom).unwrap();
    let c = poincare_constant(&dom, &mu).unwrap();
    let sd = eigensolve(&dom, &mu, ProblemKind::Neumann, &Field::default(), 2).unwrap();
    assert!((c - 1.0 / sd.eigenvalues[1].sqrt()).abs() < 1e-8 * c);
}

fn dense(m: &roughbvp::sparse::CsrMatrix) -> Mat<f64> {
    let d = m.to_dense();
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| d[i][j])
}

/// Generalized eigenvalues of `(a, b)` restricted to the columns of `z`, via
/// `b = LLᵀ` on the reduced pencil.
fn reduced_pencil_eigenvalues(a: &Mat<f64>, b: &Mat<f64>, z: &Mat<f64>) -> Vec<f64> {
    let ar = z.transpose() * a * z;
    let br = z.transpose() * b * z;
    let l = br.llt(Side::Lower).unwrap().L().to_owned();
    let mut x = ar.clone();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut c = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    let n = c.nrows();
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let s = c.self_adjoint_eigenvalues(Side::Lower).unwrap();
    s.to_vec()
}

#[test]
fn poincare_left_edge_matches_dense_null_space_oracle() {
    let (dom, _) = unit_square(32);
    let h = 1.0 / 32.0;
    let atoms = (0..32).map(|j| Atom { pos: [0.0, (j as f64 + 0.5) * h], weight: h }).collect();
    let mu = DiscreteMeasure::new(atoms, SupportKind::Boundary).unwrap();
    let forms = assemble(&dom, &mu, &Field::default()).unwrap();
    let m = forms.trace_mean_functional();
    let n = m.len();
    // eliminate the entry of largest |m| to parametrize ker mᵀ
    let pivot = (0..n).max_by(|&i, &j| m[i].abs().total_cmp(&m[j].abs())).unwrap();
    let z = Mat::from_fn(n, n - 1, |i, k| {
        let col = if k < pivot { k } else { k + 1 };
        if i == col {
            1.0
        } else if i == pivot {
            -m[col] / m[pivot]
        } else {
            0.0
        }
    });
    let lambda = reduced_pencil_eigenvalues(&dense(&forms.stiffness), &dense(&forms.mass), &z)[0];
    let c = poincare_constant(&dom, &mu).unwrap();
    assert!((c - 1.0 / lambda.sqrt()).abs() < 1e-6 * c, "{c} vs {}", 1.0 / lambda.sqrt());
}

#[test]
fn equiv_norm_matches_dense_pencil_extremes() {
    let (dom, mu) = unit_square(32);
    let forms = assemble(&dom, &mu, &Field::default()).unwrap();
    let p = dense(&forms.stiffness.add_scaled(&forms.mass, 1.0));
    let q = dense(&forms.stiffness.add_scaled(&forms.trace_gram(), 1.0));
    let eye = Mat::<f64>::identity(p.nrows(), p.nrows());
    let kappas = reduced_pencil_eigenvalues(&p, &q, &eye);
    let c = equiv_norm_constants(&dom, &mu).unwrap();
    let (lo, hi) = (kappas[0], *kappas.last().unwrap());
    assert!((c.kappa_min - lo).abs() < 1e-6 * lo, "{} vs {lo}", c.kappa_min);
    assert!((c.kappa_max - hi).abs() < 1e-6 * hi, "{} vs {hi}", c.kappa_max);
    assert!(c.c_lower * c.c_upper >= 1.0);
}

#[test]
fn heavy_measure_moves_equiv_constants() {
    let (dom, mu) = unit_square(16);
    let base = equiv_norm_constants(&dom, &mu).unwrap();
    let heavy = equiv_norm_constants(&dom, &mu.scaled(1e6).unwrap()).unwrap();
    assert!(heavy.c_upper > base.c_upper);
    // c_lower = 1/√κ_max stays within a mild factor of its base value
    assert!((heavy.c_lower / base.c_lower - 1.0).abs() < 0.2);
}

#[test]
fn lanczos_agrees_with_dense_on_koch_like_pixels() {
    let g = GridSpec::unit(20).unwrap();
    let dom = roughbvp::geometry::build_pixel_domain(g, |p| (p[0] - 0.5).abs() + (p[1] - 0.5).abs() < 0.45).unwrap();
    let mu = arc_measure_on_boundary(&dom, 2).unwrap();
    let gamma = Field::constant(3.0);
    let a = eigensolve_with(&dom, &mu, ProblemKind::Robin, &gamma, 5, &EigenOptions { method: EigenMethod::Lanczos, ..Default::default() }).unwrap();
    let b = eigensolve_with(&dom, &mu, ProblemKind::Robin, &gamma, 5, &EigenOptions { method: EigenMethod::Dense, ..Default::default() }).unwrap();
    for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        assert!((x - y).abs() < 1e-8 * (1.0 + y));
    }
}
