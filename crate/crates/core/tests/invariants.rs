//! Variational and spectral invariants of the discrete problems.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roughbvp::discretization::{assemble, BoxField, Field, ProblemKind, ProblemSpec};
use roughbvp::experiments::shape_search;
use roughbvp::geometry::{notch_family, GridDomain, GridSpec};
use roughbvp::measures::{arc_measure_on_boundary, AdmissibleTriple, DiscreteMeasure};
use roughbvp::scenarios::SHAPE_PARAMS;
use roughbvp::solver::{energy_of, normal_derivative, solve, Resolvent};
use roughbvp::spectral::eigensolve;

fn unit_square(n: usize) -> (GridDomain, DiscreteMeasure) {
    let dom = GridDomain::full_box(GridSpec::unit(n).unwrap());
    let mu = arc_measure_on_boundary(&dom, 1).unwrap();
    (dom, mu)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn check_minimizer(spec: &ProblemSpec, seed: u64) {
    let (dom, mu) = unit_square(16);
    let u = solve(&dom, &mu, spec).unwrap();
    let forms = assemble(&dom, &mu, &spec.trace_gamma()).unwrap();
    let e0 = energy_of(&forms, spec, &u.dofs, &u.values).finite().unwrap();
    assert!((e0 - u.energy).abs() <= 1e-12 * (1.0 + e0.abs()));
    let constrained = forms.constrained_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let mut v = random_vec(&mut rng, u.n_dof());
        if spec.kind == ProblemKind::Dirichlet {
            for &d in &constrained {
                v[d] = 0.0;
            }
        }
        let t = rng.gen_range(1e-3..1.0);
        let w: Vec<f64> = u.values.iter().zip(&v).map(|(a, b)| a + t * b).collect();
        let e = energy_of(&forms, spec, &u.dofs, &w).finite().unwrap();
        assert!(e >= e0 - 1e-12 * (1.0 + e0.abs()), "{e} < {e0}");
    }
}

#[test]
fn solutions_minimize_energy() {
    let f = Field::Affine { c: 1.0, gx: -0.5, gy: 2.0 };
    check_minimizer(&ProblemSpec::dirichlet(f.clone()), 1);
    check_minimizer(&ProblemSpec::robin(Field::constant(3.0), f.clone()).with_phi(Field::constant(0.5)), 2);
    check_minimizer(&ProblemSpec::neumann(f).with_alpha(1.0), 3);
}

#[test]
fn robin_eigenvalues_increase_with_gamma() {
    let (dom, mu) = unit_square(16);
    let mut previous = vec![0.0; 5];
    for gamma in [0.1, 1.0, 5.0, 50.0, 1e4] {
        let l = eigensolve(&dom, &mu, ProblemKind::Robin, &Field::constant(gamma), 5).unwrap().eigenvalues;
        for (a, b) in previous.iter().zip(&l) {
            assert!(b >= a, "gamma {gamma}: {b} < {a}");
        }
        previous = l;
    }
}

#[test]
fn large_gamma_robin_matches_dirichlet_nodewise() {
    let (dom, mu) = unit_square(32);
    let d = solve(&dom, &mu, &ProblemSpec::dirichlet(Field::constant(1.0))).unwrap();
    let r = solve(&dom, &mu, &ProblemSpec::robin(Field::constant(1e6), Field::constant(1.0))).unwrap();
    let worst = d.values.iter().zip(&r.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn robin_normal_derivative_satisfies_boundary_identity() {
    let (dom, mu) = unit_square(20);
    let spec = ProblemSpec::robin(Field::constant(2.0), Field::constant(1.0)).with_phi(Field::Affine { c: 0.3, gx: 1.0, gy: 0.0 });
    let u = solve(&dom, &mu, &spec).unwrap();
    let dn = normal_derivative(&dom, &mu, &spec, &u).unwrap();
    let forms = assemble(&dom, &mu, &spec.trace_gamma()).unwrap();
    let tu = forms.trace_mass.mul_vec(&u.values);
    let bphi = forms.boundary_load(&spec.phi);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let e = random_vec(&mut rng, u.n_dof());
        let lhs = dn.pairing_nodal(&e) + e.iter().zip(&tu).map(|(a, b)| a * b).sum::<f64>();
        let rhs: f64 = e.iter().zip(&bphi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn resolvent_scales_eigenvectors() {
    let (dom, mu) = unit_square(16);
    let alpha = 2.0;
    for (kind, gamma) in [
        (ProblemKind::Dirichlet, Field::default()),
        (ProblemKind::Robin, Field::constant(4.0)),
        (ProblemKind::Neumann, Field::default()),
    ] {
        let sd = eigensolve(&dom, &mu, kind, &gamma, 3).unwrap();
        let spec = ProblemSpec { kind, alpha, gamma: gamma.clone(), source: Field::default(), phi: Field::default() };
        let r = Resolvent::new(&dom, &mu, &spec, alpha).unwrap();
        for (lambda, phi) in sd.eigenvalues.iter().zip(&sd.eigenvectors) {
            let field = BoxField::from_domain(&dom, &sd.dofs, phi);
            let image = r.apply_field(&field).to_flat();
            let expected: Vec<f64> = field.to_flat().iter().map(|v| v / (alpha + lambda)).collect();
            let err = image.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = expected.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err < 1e-7 * scale, "{kind:?} lambda={lambda}: {err}");
        }
    }
}

fn notch_candidates() -> Vec<AdmissibleTriple> {
    let family = notch_family(GridSpec::unit(32).unwrap(), &[0.25, 0.1875, 0.125, 0.0625]).unwrap();
    family
        .members()
        .iter()
        .zip(family.labels())
        .map(|(dom, label)| {
            let arc = arc_measure_on_boundary(dom, 1).unwrap();
            AdmissibleTriple {
                label: label.clone(),
                domain: dom.clone(),
                boundary_volume: arc.clone(),
                trace_volume: arc,
                params: SHAPE_PARAMS,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn interlacing_for_random_gamma(gamma in 0.01f64..100.0) {
        let (dom, mu) = unit_square(12);
        let neu = eigensolve(&dom, &mu, ProblemKind::Neumann, &Field::default(), 4).unwrap().eigenvalues;
        let dir = eigensolve(&dom, &mu, ProblemKind::Dirichlet, &Field::default(), 4).unwrap().eigenvalues;
        let rob = eigensolve(&dom, &mu, ProblemKind::Robin, &Field::constant(gamma), 4).unwrap().eigenvalues;
        for n in 0..4 {
            let slack = 1e-8 * (1.0 + dir[n]);
            prop_assert!(neu[n] <= rob[n] + slack);
            prop_assert!(rob[n] <= dir[n] + slack);
        }
    }

    #[test]
    fn shape_search_ignores_candidate_order(order in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
        let candidates = notch_candidates();
        let spec = ProblemSpec::dirichlet(Field::constant(1.0));
        let radii = [0.25, 0.125, 0.0625];
        let reference = shape_search(&candidates, &spec, &radii).unwrap();
        let permuted: Vec<_> = order.iter().map(|&k| candidates[k].clone()).collect();
        let result = shape_search(&permuted, &spec, &radii).unwrap();
        prop_assert_eq!(&result.best.label, &reference.best.label);
        prop_assert_eq!(result.best_energy, reference.best_energy);
    }
}
