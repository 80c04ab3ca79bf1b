//! Reference families used by the experiments, the acceptance suite and the CLI.

use crate::error::Result;
use crate::geometry::{koch_prefractal_domain, notch_family, DomainFamily, GridDomain, GridSpec, SquareFootprint};
use crate::measures::{arc_measure_on_boundary, AdmissibilityParams, AdmissibleTriple, DiscreteMeasure};

/// Box holding the unit-square Koch prefractals with room for their bumps.
pub const KOCH_BOX_ORIGIN: [f64; 2] = [-0.375, -0.375];
pub const KOCH_BOX_SIDE: f64 = 1.75;

/// Notch widths of the reference stability family.
pub const NOTCH_WIDTHS: [f64; 4] = [0.25, 0.125, 0.0625, 0.03125];

/// Koch box grid with `7·3^level` cells per side, the coarsest that resolves `level`.
pub fn koch_grid(level: usize) -> Result<GridSpec> {
    GridSpec::new(KOCH_BOX_ORIGIN, KOCH_BOX_SIDE, 7 * 3usize.pow(level as u32))
}

/// Members, their arc measures, and the limit with its arc measure.
#[derive(Debug, Clone)]
pub struct FamilyScenario {
    pub family: DomainFamily,
    pub measures: Vec<DiscreteMeasure>,
    pub limit: GridDomain,
    pub limit_measure: DiscreteMeasure,
    pub proxy_limit: bool,
}

impl FamilyScenario {
    pub fn limit_pair(&self) -> (&GridDomain, &DiscreteMeasure) {
        (&self.limit, &self.limit_measure)
    }
}

fn arcs(family: &DomainFamily) -> Result<Vec<DiscreteMeasure>> {
    family.members().iter().map(|d| arc_measure_on_boundary(d, 1)).collect()
}

/// Unit square with shrinking bottom notches; the limit is the full square.
pub fn notch_scenario(n: usize, widths: &[f64]) -> Result<FamilyScenario> {
    let grid = GridSpec::unit(n)?;
    let family = notch_family(grid, widths)?;
    let limit = GridDomain::full_box(grid);
    Ok(FamilyScenario {
        measures: arcs(&family)?,
        limit_measure: arc_measure_on_boundary(&limit, 1)?,
        family,
        limit,
        proxy_limit: false,
    })
}

/// Koch prefractals of `levels` on the grid resolving `proxy_level`, which
/// serves as the (proxy) limit.
pub fn koch_scenario(levels: &[usize], proxy_level: usize) -> Result<FamilyScenario> {
    let grid = koch_grid(proxy_level)?;
    let base = SquareFootprint::unit();
    let members = levels.iter().map(|&l| koch_prefractal_domain(grid, l, base)).collect::<Result<Vec<_>>>()?;
    let labels = levels.iter().map(|l| format!("koch_l{l}")).collect();
    let family = DomainFamily::new(members, labels)?;
    let limit = koch_prefractal_domain(grid, proxy_level, base)?;
    Ok(FamilyScenario {
        measures: arcs(&family)?,
        limit_measure: arc_measure_on_boundary(&limit, 1)?,
        family,
        limit,
        proxy_limit: true,
    })
}

/// Class parameters of the reference shape search.
pub const SHAPE_PARAMS: AdmissibilityParams =
    AdmissibilityParams { eps: 0.05, s: 1.0, cs_bar: 0.9, c_bar: 10.0, d: 1.0, c_d: 5.0 };

/// Regularity radii of the reference shape search.
pub const SHAPE_RADII: [f64; 4] = [0.25, 0.125, 0.0625, 0.03125];

/// Level of the Koch grid the reference shape search runs on.
pub const SHAPE_GRID_LEVEL: usize = 3;

/// Square `[0.3, 0.7]²` every candidate must contain.
pub fn shape_core(p: [f64; 2]) -> bool {
    (0.3..=0.7).contains(&p[0]) && (0.3..=0.7).contains(&p[1])
}

/// `dom` minus the centred bottom notch of width and depth `w` of the unit square.
fn cut_notch(dom: &GridDomain, w: f64) -> Result<GridDomain> {
    let g = *dom.grid();
    let mask = (0..g.cell_count())
        .map(|c| {
            let p = g.cell_center(c);
            dom.inside(c) && !((p[0] - 0.5).abs() < 0.5 * w && p[1] < w)
        })
        .collect();
    GridDomain::from_mask(g, mask)
}

/// The 16 reference candidates on the Koch box:
/// - Koch levels 0–2 and notched squares of widths 0.28…0.05 with `ν = μ`
///   (arc measure), the sub-family of equal boundary and trace volumes;
/// - notched squares of widths 0.26, 0.14, 0.03 with `μ = ν/2`;
/// - three candidates whose `ν = 3·arc` exceeds the mass cap.
pub fn shape_candidates() -> Result<Vec<AdmissibleTriple>> {
    let grid = koch_grid(SHAPE_GRID_LEVEL)?;
    let base = SquareFootprint::unit();
    let square = koch_prefractal_domain(grid, 0, base)?;
    let mut out = Vec::with_capacity(16);
    let mut push = |label: String, dom: GridDomain, nu_scale: f64, mu_scale: f64| -> Result<()> {
        let dom = dom.with_core_predicate(shape_core)?;
        let arc = arc_measure_on_boundary(&dom, 1)?;
        out.push(AdmissibleTriple {
            label,
            boundary_volume: arc.scaled(nu_scale)?,
            trace_volume: arc.scaled(mu_scale)?,
            domain: dom,
            params: SHAPE_PARAMS,
        });
        Ok(())
    };
    for level in 0..=2 {
        push(format!("koch_l{level}"), koch_prefractal_domain(grid, level, base)?, 1.0, 1.0)?;
    }
    for w in [0.28, 0.24, 0.2, 0.16, 0.12, 0.08, 0.05] {
        push(format!("notch_w{w}"), cut_notch(&square, w)?, 1.0, 1.0)?;
    }
    for w in [0.26, 0.14, 0.03] {
        push(format!("notch_w{w}_half_mu"), cut_notch(&square, w)?, 1.0, 0.5)?;
    }
    push("koch_l1_heavy_nu".into(), koch_prefractal_domain(grid, 1, base)?, 3.0, 1.0)?;
    for w in [0.22, 0.1] {
        push(format!("notch_w{w}_heavy_nu"), cut_notch(&square, w)?, 3.0, 1.0)?;
    }
    Ok(out)
}

/// Candidates whose boundary and trace volumes coincide.
pub fn equal_volume_subfamily(candidates: &[AdmissibleTriple]) -> Vec<AdmissibleTriple> {
    candidates.iter().filter(|t| t.boundary_volume == t.trace_volume).cloned().collect()
}
