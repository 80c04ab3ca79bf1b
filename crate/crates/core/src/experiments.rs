//! Convergence and shape-optimization experiments over families of domains.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{assemble, box_inner, BoxField, Field, ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::geometry::{char_distance, hausdorff_distance, DomainFamily, GridDomain, GridSpec};
use crate::measures::{verify_admissible_with, weak_distance, AdmissibleTriple, DiscreteMeasure, UniformSampling};
use crate::solver::{solve_with, write_solution_csv, Resolvent, SolveOptions, WeakSolution};
use crate::spectral::{eigensolve_with, op_norm_diff, EigenOptions, SpectralData};

/// Chebyshev degree used for weak measure distances in reports.
pub const WEAK_DEGREE: usize = 8;
/// Power-iteration steps per restart for resolvent differences.
pub const OPNORM_ITERS: usize = 60;

/// Per-member columns of a convergence experiment. Rows whose member failed
/// hold NaN and are listed in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    /// The limit object is a proxy (e.g. the highest prefractal level).
    pub proxy_limit: bool,
    pub labels: Vec<String>,
    pub hausdorff_to_limit: Vec<f64>,
    pub char_to_limit: Vec<f64>,
    pub weak_measure_to_limit: Vec<f64>,
    pub solution_l2_err: Option<Vec<f64>>,
    pub energy_err: Option<Vec<f64>>,
    /// `eigenvalue_errs[m][n] = |λ_{n+1}^{(m)} − λ_{n+1}|`.
    pub eigenvalue_errs: Option<Vec<Vec<f64>>>,
    /// `1 − |⟨φ_n^{(m)}, φ_n⟩|` on the box.
    pub eigenvector_misalignment: Option<Vec<Vec<f64>>>,
    pub resolvent_opnorm_est: Option<Vec<f64>>,
    /// Energies of the members themselves (shape-search diagnostics).
    pub energy: Option<Vec<f64>>,
    pub failures: Vec<(String, String)>,
    /// Per column: the last third of its entries is nonincreasing.
    pub monotone_tail: BTreeMap<String, bool>,
}

impl ConvergenceReport {
    fn new(experiment: &str, proxy_limit: bool, labels: Vec<String>) -> Self {
        Self {
            experiment: experiment.into(),
            proxy_limit,
            labels,
            hausdorff_to_limit: Vec::new(),
            char_to_limit: Vec::new(),
            weak_measure_to_limit: Vec::new(),
            solution_l2_err: None,
            energy_err: None,
            eigenvalue_errs: None,
            eigenvector_misalignment: None,
            resolvent_opnorm_est: None,
            energy: None,
            failures: Vec::new(),
            monotone_tail: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Named numeric columns in CSV order.
    pub fn columns(&self) -> Vec<(String, Vec<f64>)> {
        let mut cols = vec![
            ("hausdorff_to_limit".to_string(), self.hausdorff_to_limit.clone()),
            ("char_to_limit".to_string(), self.char_to_limit.clone()),
            ("weak_measure_to_limit".to_string(), self.weak_measure_to_limit.clone()),
        ];
        let mut push = |name: &str, c: &Option<Vec<f64>>| {
            if let Some(c) = c {
                cols.push((name.to_string(), c.clone()));
            }
        };
        push("energy", &self.energy);
        push("solution_l2_err", &self.solution_l2_err);
        push("energy_err", &self.energy_err);
        push("resolvent_opnorm_est", &self.resolvent_opnorm_est);
        for (name, table) in [("eigenvalue_err", &self.eigenvalue_errs), ("eigvec_misalignment", &self.eigenvector_misalignment)] {
            if let Some(t) = table {
                let width = t.iter().map(Vec::len).max().unwrap_or(0);
                for n in 0..width {
                    let col = t.iter().map(|row| row.get(n).copied().unwrap_or(f64::NAN)).collect();
                    cols.push((format!("{name}_{}", n + 1), col));
                }
            }
        }
        cols
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.columns().into_iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    fn finish(mut self) -> Self {
        self.monotone_tail = self.columns().into_iter().map(|(n, c)| (n, tail_nonincreasing(&c))).collect();
        self
    }

    /// `label,<columns…>` with one row per member.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let cols = self.columns();
        write!(w, "label")?;
        for (n, _) in &cols {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (m, label) in self.labels.iter().enumerate() {
            write!(w, "{label}")?;
            for (_, c) in &cols {
                write!(w, ",{}", c[m])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn strictly_decreasing(c: &[f64]) -> bool {
    c.windows(2).all(|w| w[1] < w[0])
}

pub fn nonincreasing(c: &[f64]) -> bool {
    c.windows(2).all(|w| w[1] <= w[0])
}

fn tail_nonincreasing(c: &[f64]) -> bool {
    let len = c.len().div_ceil(3).max(2).min(c.len());
    nonincreasing(&c[c.len() - len..])
}

fn check_family(family: &DomainFamily, measures: &[DiscreteMeasure], limit: &GridDomain) -> Result<()> {
    if family.is_empty() {
        return Err(Error::InvalidInput("empty family".into()));
    }
    if measures.len() != family.len() {
        return Err(Error::InvalidInput(format!("{} measures for {} members", measures.len(), family.len())));
    }
    if family.grid() != Some(limit.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

struct Geometry {
    hausdorff: f64,
    chi: f64,
    weak: f64,
}

fn geometry_to(dom: &GridDomain, mu: &DiscreteMeasure, limit: &GridDomain, limit_mu: &DiscreteMeasure) -> Result<Geometry> {
    Ok(Geometry {
        hausdorff: hausdorff_distance(dom, limit)?,
        chi: char_distance(dom, limit)?,
        weak: weak_distance(mu, limit_mu, WEAK_DEGREE, dom.grid())?,
    })
}

/// Outcome of one member of a stability experiment.
#[derive(Debug, Clone)]
pub struct MemberSolution {
    pub label: String,
    pub solution: WeakSolution,
}

/// Solves on every member and on the limit; reports L²(D) distances of the
/// zero continuations, energy differences and geometric distances.
pub fn stability_experiment(
    family: &DomainFamily,
    measures: &[DiscreteMeasure],
    limit: (&GridDomain, &DiscreteMeasure),
    spec: &ProblemSpec,
) -> Result<ConvergenceReport> {
    Ok(stability_experiment_full(family, measures, limit, spec, false)?.0)
}

/// Like [`stability_experiment`], also returning member and limit solutions.
pub fn stability_experiment_full(
    family: &DomainFamily,
    measures: &[DiscreteMeasure],
    limit: (&GridDomain, &DiscreteMeasure),
    spec: &ProblemSpec,
    proxy_limit: bool,
) -> Result<(ConvergenceReport, Vec<Option<MemberSolution>>, WeakSolution)> {
    let (ldom, lmu) = limit;
    check_family(family, measures, ldom)?;
    if !spec.phi.is_zero() {
        return Err(Error::InvalidProblem("stability experiments need φ ≡ 0".into()));
    }
    let opts = SolveOptions::default();
    let reference = solve_with(ldom, lmu, spec, &opts)?;
    let reference_field = BoxField::from_domain(ldom, &reference.dofs, &reference.values);
    let rows: Vec<(Result<Geometry>, Result<WeakSolution>)> = family
        .members()
        .par_iter()
        .zip(measures)
        .map(|(dom, mu)| (geometry_to(dom, mu, ldom, lmu), solve_with(dom, mu, spec, &opts)))
        .collect();
    let mut report = ConvergenceReport::new("stability", proxy_limit, family.labels().to_vec());
    let mut l2 = Vec::new();
    let mut energy = Vec::new();
    let mut members = Vec::new();
    for ((geo, sol), (dom, label)) in rows.into_iter().zip(family.members().iter().zip(family.labels())) {
        let geo = geo?;
        report.hausdorff_to_limit.push(geo.hausdorff);
        report.char_to_limit.push(geo.chi);
        report.weak_measure_to_limit.push(geo.weak);
        match sol {
            Ok(u) => {
                let field = BoxField::from_domain(dom, &u.dofs, &u.values);
                l2.push(field.sub(&reference_field).norm());
                energy.push((u.energy - reference.energy).abs());
                members.push(Some(MemberSolution { label: label.clone(), solution: u }));
            }
            Err(e) => {
                l2.push(f64::NAN);
                energy.push(f64::NAN);
                report.failures.push((label.clone(), e.to_string()));
                members.push(None);
            }
        }
    }
    report.solution_l2_err = Some(l2);
    report.energy_err = Some(energy);
    Ok((report.finish(), members, reference))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralExperimentOptions {
    pub proxy_limit: bool,
    pub seed: u64,
    /// Power-iteration steps per restart; 0 skips the resolvent estimate.
    pub opnorm_iters: usize,
}

impl Default for SpectralExperimentOptions {
    fn default() -> Self {
        Self { proxy_limit: false, seed: 0, opnorm_iters: OPNORM_ITERS }
    }
}

/// Eigensolves every member and the limit; records eigenvalue errors,
/// eigenvector misalignment after sign fixing, and an operator-norm estimate
/// of the difference of the quasi-inverses at `α = 1`.
pub fn spectral_convergence_experiment(
    family: &DomainFamily,
    measures: &[DiscreteMeasure],
    limit: (&GridDomain, &DiscreteMeasure),
    kind: ProblemKind,
    gamma: &Field,
    count: usize,
) -> Result<ConvergenceReport> {
    spectral_convergence_experiment_with(family, measures, limit, kind, gamma, count, &SpectralExperimentOptions::default())
}

pub fn spectral_convergence_experiment_with(
    family: &DomainFamily,
    measures: &[DiscreteMeasure],
    limit: (&GridDomain, &DiscreteMeasure),
    kind: ProblemKind,
    gamma: &Field,
    count: usize,
    opts: &SpectralExperimentOptions,
) -> Result<ConvergenceReport> {
    let seed = opts.seed;
    let proxy_limit = opts.proxy_limit;
    let (ldom, lmu) = limit;
    check_family(family, measures, ldom)?;
    let eig_opts = EigenOptions { seed, ..Default::default() };
    let grid = *ldom.grid();
    let reference = eigensolve_with(ldom, lmu, kind, gamma, count, &eig_opts)?;
    let resolvent_spec = ProblemSpec { kind, alpha: 1.0, gamma: gamma.clone(), source: Field::default(), phi: Field::default() };
    let limit_resolvent = if opts.opnorm_iters > 0 {
        let forms = assemble(ldom, lmu, &resolvent_spec.trace_gamma())?;
        Some(Resolvent::from_forms(ldom, &forms, kind, 1.0)?)
    } else {
        None
    };
    let reference_fields = box_eigenfields(ldom, &reference);
    let rows: Vec<Result<(Geometry, Vec<f64>, Vec<f64>, f64)>> = family
        .members()
        .par_iter()
        .zip(measures)
        .map(|(dom, mu)| {
            let geo = geometry_to(dom, mu, ldom, lmu)?;
            let sd = eigensolve_with(dom, mu, kind, gamma, count, &eig_opts)?;
            let errs = sd.eigenvalues.iter().zip(&reference.eigenvalues).map(|(a, b)| (a - b).abs()).collect();
            let fields = box_eigenfields(dom, &sd);
            let mis = fields
                .iter()
                .zip(&reference_fields)
                .map(|(a, b)| (1.0 - a.inner(b).abs()).max(0.0))
                .collect();
            let Some(limit_resolvent) = &limit_resolvent else {
                return Ok((geo, errs, mis, f64::NAN));
            };
            let forms = assemble(dom, mu, &resolvent_spec.trace_gamma())?;
            let resolvent = Resolvent::from_forms(dom, &forms, kind, 1.0)?;
            let est = op_norm_diff(
                |x: &[f64]| resolvent.apply_field(&BoxField::from_flat(grid, x)).to_flat(),
                |x: &[f64]| limit_resolvent.apply_field(&BoxField::from_flat(grid, x)).to_flat(),
                |a, b| box_inner(&grid, a, b),
                4 * grid.cell_count(),
                opts.opnorm_iters,
                seed,
            );
            Ok((geo, errs, mis, est))
        })
        .collect();
    let mut report = ConvergenceReport::new("spectral", proxy_limit, family.labels().to_vec());
    let (mut errs, mut mis, mut est) = (Vec::new(), Vec::new(), Vec::new());
    for (row, label) in rows.into_iter().zip(family.labels()) {
        match row {
            Ok((geo, e, m, o)) => {
                report.hausdorff_to_limit.push(geo.hausdorff);
                report.char_to_limit.push(geo.chi);
                report.weak_measure_to_limit.push(geo.weak);
                errs.push(e);
                mis.push(m);
                est.push(o);
            }
            Err(e) => {
                for col in [&mut report.hausdorff_to_limit, &mut report.char_to_limit, &mut report.weak_measure_to_limit, &mut est] {
                    col.push(f64::NAN);
                }
                errs.push(vec![f64::NAN; count]);
                mis.push(vec![f64::NAN; count]);
                report.failures.push((label.clone(), e.to_string()));
            }
        }
    }
    report.eigenvalue_errs = Some(errs);
    report.eigenvector_misalignment = Some(mis);
    report.resolvent_opnorm_est = limit_resolvent.is_some().then_some(est);
    Ok(report.finish())
}

fn box_eigenfields(dom: &GridDomain, sd: &SpectralData) -> Vec<BoxField> {
    sd.eigenvectors.iter().map(|v| BoxField::from_domain(dom, &sd.dofs, v)).collect()
}

/// One candidate of a shape search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub admissible: bool,
    /// `J(Ω, μ)(u(Ω, μ))`; `None` for excluded or failed candidates.
    pub energy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ShapeSearchResult {
    pub best: AdmissibleTriple,
    pub best_energy: f64,
    /// In candidate order.
    pub evaluated: Vec<Evaluation>,
    /// Admissible candidates with their energies, in candidate order.
    pub admissible: Vec<(AdmissibleTriple, f64)>,
    /// Evaluation log lines in candidate order.
    pub trace: Vec<String>,
}

/// Exhaustive minimization of `J(Ω, μ)(u) = E(u)` over the admissible
/// candidates; ties go to the earlier candidate.
pub fn shape_search(candidates: &[AdmissibleTriple], spec: &ProblemSpec, radii: &[f64]) -> Result<ShapeSearchResult> {
    shape_search_with(candidates, spec, radii, UniformSampling::default())
}

pub fn shape_search_with(
    candidates: &[AdmissibleTriple],
    spec: &ProblemSpec,
    radii: &[f64],
    sampling: UniformSampling,
) -> Result<ShapeSearchResult> {
    if candidates.is_empty() {
        return Err(Error::NoAdmissibleCandidate);
    }
    if !spec.phi.is_zero() {
        return Err(Error::InvalidProblem("shape search needs φ ≡ 0".into()));
    }
    let outcomes: Vec<(bool, Result<f64>)> = candidates
        .par_iter()
        .map(|t| match verify_admissible_with(t, radii, sampling) {
            Ok(rep) if rep.pass => {
                (true, solve_with(&t.domain, &t.trace_volume, spec, &SolveOptions::default()).map(|u| u.energy))
            }
            Ok(_) => (false, Err(Error::InvalidInput("not admissible".into()))),
            Err(e) => (false, Err(e)),
        })
        .collect();
    let mut evaluated = Vec::new();
    let mut admissible = Vec::new();
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (k, (t, (pass, energy))) in candidates.iter().zip(outcomes).enumerate() {
        let (energy, error) = match (pass, energy) {
            (true, Ok(e)) => (Some(e), None),
            (_, Err(e)) => (None, Some(e.to_string())),
            (false, Ok(_)) => (None, None),
        };
        trace.push(match (energy, &error) {
            (Some(e), _) => format!("{k} {} admissible energy={e}", t.label),
            (None, Some(msg)) => format!("{k} {} excluded: {msg}", t.label),
            (None, None) => format!("{k} {} excluded", t.label),
        });
        if let Some(e) = energy {
            admissible.push((t.clone(), e));
            if best.map_or(true, |(_, be)| e < be) {
                best = Some((k, e));
            }
        }
        evaluated.push(Evaluation { label: t.label.clone(), admissible: pass, energy, error });
    }
    let (b, best_energy) = best.ok_or(Error::NoAdmissibleCandidate)?;
    Ok(ShapeSearchResult { best: candidates[b].clone(), best_energy, evaluated, admissible, trace })
}

/// Admissible candidates sorted by energy, highest first (ties by label),
/// with distances to the best candidate.
pub fn minimizing_sequence_diagnostics(result: &ShapeSearchResult) -> Result<ConvergenceReport> {
    if result.admissible.len() < 3 {
        return Err(Error::TooFewCandidates { needed: 3, found: result.admissible.len() });
    }
    let mut order: Vec<&(AdmissibleTriple, f64)> = result.admissible.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.label.cmp(&b.0.label)));
    let best = &result.best;
    let rows: Vec<Result<Geometry>> = order
        .par_iter()
        .map(|(t, _)| geometry_to(&t.domain, &t.boundary_volume, &best.domain, &best.boundary_volume))
        .collect();
    let mut report = ConvergenceReport::new("minimizing_sequence", false, order.iter().map(|(t, _)| t.label.clone()).collect());
    for row in rows {
        let g = row?;
        report.hausdorff_to_limit.push(g.hausdorff);
        report.char_to_limit.push(g.chi);
        report.weak_measure_to_limit.push(g.weak);
    }
    report.energy = Some(order.iter().map(|(_, e)| *e).collect());
    report.energy_err = Some(order.iter().map(|(_, e)| (e - result.best_energy).abs()).collect());
    Ok(report.finish())
}

/// Manifest written next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub grid: GridSpec,
    pub spec: serde_json::Value,
    pub proxy_limit: bool,
    pub seed: u64,
    pub members: Vec<String>,
    pub failures: Vec<(String, String)>,
}

/// Writes `report.csv`, `manifest.json` and `members/<label>.csv` under `dir`.
pub fn write_run_dir(
    dir: &Path,
    report: &ConvergenceReport,
    manifest: &RunManifest,
    solutions: &[(String, &WeakSolution)],
) -> Result<()> {
    let io = |e: std::io::Error| Error::Serialization(e.to_string());
    fs::create_dir_all(dir).map_err(io)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(io)?;
    fs::write(dir.join("report.csv"), csv).map_err(io)?;
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n").map_err(io)?;
    if !solutions.is_empty() {
        let members = dir.join("members");
        fs::create_dir_all(&members).map_err(io)?;
        for (label, u) in solutions {
            let mut buf = Vec::new();
            write_solution_csv(&mut buf, u).map_err(io)?;
            fs::write(members.join(format!("{}.csv", file_stem(label))), buf).map_err(io)?;
        }
    }
    Ok(())
}

/// Label made safe for a file name.
pub fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.=".contains(c) { c } else { '_' }).collect()
}
