//! Subcommand implementations. Every file is written below `out_dir`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use roughbvp::discretization::{Field, ProblemKind};
use roughbvp::experiments::{
    file_stem, minimizing_sequence_diagnostics, shape_search_with, spectral_convergence_experiment_with,
    stability_experiment_full, write_run_dir, ConvergenceReport, RunManifest, SpectralExperimentOptions, OPNORM_ITERS,
};
use roughbvp::geometry::{koch_prefractal_domain, notch_family, DomainFamily, GridDomain, SquareFootprint};
use roughbvp::measures::{arc_measure_on_boundary, AdmissibleTriple, UniformSampling};
use roughbvp::scenarios::{koch_grid, shape_candidates, SHAPE_GRID_LEVEL, SHAPE_RADII};
use roughbvp::solver::{solve, write_nodal_csv, write_solution_csv, SolutionSidecar, WeakSolution};
use roughbvp::spectral::{equiv_norm_constants_with, eigensolve_with, poincare_constant_with, EigenOptions};
use serde::Serialize;

use crate::config::{DomainConfig, LoadedConfig};
use crate::{CliError, Command, Experiment};

pub fn dispatch(command: &Command, cfg: &LoadedConfig) -> Result<(), CliError> {
    match command {
        Command::Solve => run_solve(cfg),
        Command::Spectrum { count } => run_spectrum(cfg, *count),
        Command::Poincare => run_poincare(cfg),
        Command::Converge { experiment, count } => run_converge(cfg, *experiment, *count),
        Command::Optimize => run_optimize(cfg),
        Command::Check => run_check(cfg),
    }
}

fn out_dir(cfg: &LoadedConfig) -> Result<&Path, CliError> {
    let dir = cfg.config.out_dir.as_path();
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn manifest(cfg: &LoadedConfig, experiment: &str, proxy_limit: bool, members: Vec<String>) -> RunManifest {
    RunManifest {
        experiment: experiment.into(),
        config_hash: cfg.config.hash(),
        grid: cfg.config.grid,
        spec: serde_json::to_value(&cfg.config.problem).expect("problem serializes"),
        proxy_limit,
        seed: cfg.config.seed,
        members,
        failures: Vec::new(),
    }
}

fn eigen_options(cfg: &LoadedConfig) -> EigenOptions {
    EigenOptions { seed: cfg.config.seed, ..Default::default() }
}

fn run_solve(cfg: &LoadedConfig) -> Result<(), CliError> {
    let (label, dom) = cfg.domain()?;
    let mu = cfg.measure(&dom)?;
    let u = solve(&dom, &mu, &cfg.config.problem)?;
    let dir = out_dir(cfg)?;
    write_with(&dir.join("solution.csv"), |w| write_solution_csv(w, &u))?;
    write_json(&dir.join("solution.json"), &SolutionSidecar::from(&u))?;
    write_json(&dir.join("domain.json"), &dom)?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, "solve", false, vec![label]))?;
    println!("energy={} n_dof={} residual={:e}", u.energy, u.n_dof(), u.residual_norm);
    Ok(())
}

fn run_spectrum(cfg: &LoadedConfig, count: usize) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Config("--count must be positive".into()));
    }
    let (label, dom) = cfg.domain()?;
    let mu = cfg.measure(&dom)?;
    let p = &cfg.config.problem;
    let sd = eigensolve_with(&dom, &mu, p.kind, &p.gamma, count, &eigen_options(cfg))?;
    let dir = out_dir(cfg)?;
    write_with(&dir.join("spectrum.csv"), |w| sd.write_csv(w))?;
    let modes = dir.join("modes");
    fs::create_dir_all(&modes)?;
    for (k, phi) in sd.eigenvectors.iter().enumerate() {
        write_with(&modes.join(format!("mode_{}.csv", k + 1)), |w| write_nodal_csv(w, &sd.dofs, phi))?;
    }
    write_json(&dir.join("domain.json"), &dom)?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, "spectrum", false, vec![label]))?;
    for (k, l) in sd.eigenvalues.iter().enumerate() {
        println!("lambda_{} = {l}", k + 1);
    }
    Ok(())
}

#[derive(Serialize)]
struct PoincareOutput {
    poincare_constant: f64,
    kappa_min: f64,
    kappa_max: f64,
    c_lower: f64,
    c_upper: f64,
}

fn run_poincare(cfg: &LoadedConfig) -> Result<(), CliError> {
    let (label, dom) = cfg.domain()?;
    let mu = cfg.measure(&dom)?;
    let opts = eigen_options(cfg);
    let c = poincare_constant_with(&dom, &mu, &opts)?;
    let eq = equiv_norm_constants_with(&dom, &mu, &opts)?;
    let out = PoincareOutput {
        poincare_constant: c,
        kappa_min: eq.kappa_min,
        kappa_max: eq.kappa_max,
        c_lower: eq.c_lower,
        c_upper: eq.c_upper,
    };
    let dir = out_dir(cfg)?;
    write_with(&dir.join("poincare.csv"), |w| {
        writeln!(w, "quantity,value")?;
        for (name, v) in [
            ("poincare_constant", c),
            ("kappa_min", eq.kappa_min),
            ("kappa_max", eq.kappa_max),
            ("c_lower", eq.c_lower),
            ("c_upper", eq.c_upper),
        ] {
            writeln!(w, "{name},{v}")?;
        }
        Ok(())
    })?;
    write_json(&dir.join("poincare.json"), &out)?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, "poincare", false, vec![label]))?;
    println!("C={c} c_lower={} c_upper={}", eq.c_lower, eq.c_upper);
    Ok(())
}

struct Scenario {
    family: DomainFamily,
    limit: GridDomain,
    proxy_limit: bool,
}

/// Notch widths converge to the full box; Koch levels `0..level` converge to
/// `level` as a proxy limit.
fn scenario(cfg: &LoadedConfig) -> Result<Scenario, CliError> {
    let grid = cfg.config.grid;
    match &cfg.config.domain {
        DomainConfig::Notch { widths } => Ok(Scenario {
            family: notch_family(grid, widths)?,
            limit: GridDomain::full_box(grid),
            proxy_limit: false,
        }),
        DomainConfig::Koch { level } if *level >= 1 => {
            let base = SquareFootprint::unit();
            let members = (0..*level).map(|l| koch_prefractal_domain(grid, l, base)).collect::<Result<Vec<_>, _>>()?;
            let labels = (0..*level).map(|l| format!("koch_l{l}")).collect();
            Ok(Scenario {
                family: DomainFamily::new(members, labels)?,
                limit: koch_prefractal_domain(grid, *level, base)?,
                proxy_limit: true,
            })
        }
        _ => Err(CliError::Config("converge needs a notch domain or a Koch domain of level ≥ 1".into())),
    }
}

fn run_converge(cfg: &LoadedConfig, experiment: Experiment, count: usize) -> Result<(), CliError> {
    let s = scenario(cfg)?;
    let measures = cfg.family_measures(&s.family)?;
    let limit_family = DomainFamily::new(vec![s.limit.clone()], vec!["limit".into()])?;
    let limit_measure = cfg.family_measures(&limit_family)?.remove(0);
    let limit = (&s.limit, &limit_measure);
    let p = &cfg.config.problem;
    let dir = out_dir(cfg)?;
    let labels = s.family.labels().to_vec();
    match experiment {
        Experiment::Stability => {
            let (report, members, reference) = stability_experiment_full(&s.family, &measures, limit, p, s.proxy_limit)?;
            let mut solutions: Vec<(String, &WeakSolution)> =
                members.iter().flatten().map(|m| (m.label.clone(), &m.solution)).collect();
            solutions.push(("limit".into(), &reference));
            let mut m = manifest(cfg, "stability", s.proxy_limit, labels);
            m.failures = report.failures.clone();
            write_run_dir(dir, &report, &m, &solutions)?;
            print_report(&report);
        }
        Experiment::Spectral => {
            if count == 0 {
                return Err(CliError::Config("--count must be positive".into()));
            }
            let opts = SpectralExperimentOptions { proxy_limit: s.proxy_limit, seed: cfg.config.seed, opnorm_iters: OPNORM_ITERS };
            let report =
                spectral_convergence_experiment_with(&s.family, &measures, limit, p.kind, &p.gamma, count, &opts)?;
            let mut m = manifest(cfg, "spectral", s.proxy_limit, labels);
            m.failures = report.failures.clone();
            write_run_dir(dir, &report, &m, &[])?;
            print_report(&report);
        }
    }
    write_json(&dir.join("domain.json"), &s.limit)?;
    Ok(())
}

fn print_report(report: &ConvergenceReport) {
    let mut out = std::io::stdout().lock();
    let _ = report.write_csv(&mut out);
}

/// Candidates for `optimize`: the reference family, the full box with its
/// notched variants, or Koch levels `0..=level`, all with `ν = μ = arc`.
fn candidates(cfg: &LoadedConfig) -> Result<(Vec<AdmissibleTriple>, Vec<f64>), CliError> {
    let grid = cfg.config.grid;
    if cfg.config.domain == DomainConfig::ReferenceShapes {
        if grid != koch_grid(SHAPE_GRID_LEVEL)? {
            return Err(CliError::Config("reference_shapes needs the level-3 Koch box grid (origin -0.375, side 1.75, n 189)".into()));
        }
        let mut c = shape_candidates()?;
        let radii = match &cfg.config.admissibility {
            Some(a) => {
                c.iter_mut().for_each(|t| t.params = a.params());
                a.radii.clone()
            }
            None => SHAPE_RADII.to_vec(),
        };
        return Ok((c, radii));
    }
    let adm = cfg.admissibility()?;
    let domains: Vec<(String, GridDomain)> = match &cfg.config.domain {
        DomainConfig::Notch { widths } => {
            let family = notch_family(grid, widths)?;
            std::iter::once(("square".to_string(), GridDomain::full_box(grid)))
                .chain(family.labels().iter().cloned().zip(family.members().iter().cloned()))
                .collect()
        }
        DomainConfig::Koch { level } => (0..=*level)
            .map(|l| Ok((format!("koch_l{l}"), koch_prefractal_domain(grid, l, SquareFootprint::unit())?)))
            .collect::<Result<_, CliError>>()?,
        _ => return Err(CliError::Config("optimize needs reference_shapes, notch or koch".into())),
    };
    let mut out = Vec::with_capacity(domains.len());
    for (label, domain) in domains {
        let arc = arc_measure_on_boundary(&domain, 1)?;
        out.push(AdmissibleTriple { label, domain, boundary_volume: arc.clone(), trace_volume: arc, params: adm.params() });
    }
    Ok((out, adm.radii.clone()))
}

#[derive(Serialize)]
struct BestOutput<'a> {
    label: &'a str,
    energy: f64,
    boundary_mass: f64,
    trace_mass: f64,
    domain: &'a GridDomain,
}

fn run_optimize(cfg: &LoadedConfig) -> Result<(), CliError> {
    let (cands, radii) = candidates(cfg)?;
    let sampling = UniformSampling { seed: cfg.config.seed, ..Default::default() };
    let result = shape_search_with(&cands, &cfg.config.problem, &radii, sampling)?;
    let dir = out_dir(cfg)?;
    write_with(&dir.join("search.csv"), |w| {
        writeln!(w, "index,label,admissible,energy,error")?;
        for (k, e) in result.evaluated.iter().enumerate() {
            let energy = e.energy.map(|v| v.to_string()).unwrap_or_default();
            let error = e.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            writeln!(w, "{k},{},{},{energy},{error}", e.label, e.admissible)?;
        }
        Ok(())
    })?;
    write_json(
        &dir.join("best.json"),
        &BestOutput {
            label: &result.best.label,
            energy: result.best_energy,
            boundary_mass: result.best.boundary_volume.total_mass(),
            trace_mass: result.best.trace_volume.total_mass(),
            domain: &result.best.domain,
        },
    )?;
    let labels: Vec<String> = cands.iter().map(|t| t.label.clone()).collect();
    write_json(&dir.join("manifest.json"), &manifest(cfg, "optimize", false, labels))?;
    if result.admissible.len() >= 3 {
        let report = minimizing_sequence_diagnostics(&result)?;
        let m = manifest(cfg, "minimizing_sequence", false, report.labels.clone());
        write_run_dir(&dir.join("diagnostics"), &report, &m, &[])?;
    }
    let domains = dir.join("domains");
    fs::create_dir_all(&domains)?;
    for t in &cands {
        write_json(&domains.join(format!("{}.json", file_stem(&t.label))), &t.domain)?;
    }
    for line in &result.trace {
        println!("{line}");
    }
    println!("best {} energy={}", result.best.label, result.best_energy);
    Ok(())
}

/// `u(½,½)` for `−Δu = 1`, zero boundary values, unit square (double sine series).
pub fn fourier_center_value() -> f64 {
    let mut s = 0.0;
    for j in (1..2000).step_by(2) {
        for k in (1..2000).step_by(2) {
            let sign = if (j / 2 + k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let (jf, kf) = (j as f64, k as f64);
            s += sign / (jf * kf * (jf * jf + kf * kf));
        }
    }
    16.0 / PI.powi(4) * s
}

/// Solves the configured Dirichlet problem with constant source `c` on the full
/// box of side `L` and compares the centre value with `c L² u(½,½)`.
fn run_check(cfg: &LoadedConfig) -> Result<(), CliError> {
    let p = &cfg.config.problem;
    let c = match (&cfg.config.domain, p.kind, &p.source, p.alpha) {
        (DomainConfig::Square, ProblemKind::Dirichlet, Field::Constant { value }, a) if a == 0.0 && p.phi.is_zero() => *value,
        _ => return Err(CliError::Config("check needs a square domain with a Dirichlet problem, constant source, α = 0".into())),
    };
    let (_, dom) = cfg.domain()?;
    let mu = cfg.measure(&dom)?;
    let u = solve(&dom, &mu, p)?;
    let g = cfg.config.grid;
    let [ox, oy] = g.origin();
    let center = u.value_at([ox + 0.5 * g.side(), oy + 0.5 * g.side()]).ok_or_else(|| CliError::Numerical("centre outside the domain".into()))?;
    let oracle = c * g.side() * g.side() * fourier_center_value();
    if (center - oracle).abs() < 1e-3 * (c * g.side() * g.side()).abs().max(1.0) {
        println!("PASS center={center:.4}");
        Ok(())
    } else {
        println!("FAIL center={center:.4} oracle={oracle:.4}");
        Err(CliError::CheckFailed(format!("centre value {center} differs from oracle {oracle}")))
    }
}
