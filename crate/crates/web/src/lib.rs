//! Browser bindings: domain raster, solution field and eigenmode on a cell grid.
//!
//! Every field is returned per cell in row-major order (`j * n + i`, `j` the
//! row from the bottom), the mean of the four corner values for inside cells
//! and NaN outside.

use roughbvp::discretization::{DofMap, Field, ProblemKind, ProblemSpec};
use roughbvp::geometry::{koch_prefractal_domain, notched_square, GridDomain, GridSpec, SquareFootprint};
use roughbvp::measures::arc_measure_on_boundary;
use roughbvp::scenarios::koch_grid;
use roughbvp::solver::solve;
use roughbvp::spectral::eigensolve;
use wasm_bindgen::prelude::*;

/// Largest Koch level the demo builds (grid 189²).
pub const MAX_KOCH_LEVEL: usize = 3;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// `shape` is `square`, `notch` (`param` = width) or `koch` (`param` = level).
/// Square and notch use an `n`-cell unit grid; Koch uses its own box grid.
pub fn build_domain(shape: &str, param: f64, n: usize) -> Result<GridDomain, String> {
    match shape {
        "square" => Ok(GridDomain::full_box(GridSpec::unit(n).map_err(|e| e.to_string())?)),
        "notch" => {
            let grid = GridSpec::unit(n).map_err(|e| e.to_string())?;
            notched_square(grid, SquareFootprint::unit(), param).map_err(|e| e.to_string())
        }
        "koch" => {
            let level = param as usize;
            if param < 0.0 || param.fract() != 0.0 || level > MAX_KOCH_LEVEL {
                return Err(format!("Koch level must be an integer in 0..={MAX_KOCH_LEVEL}"));
            }
            let grid = koch_grid(level).map_err(|e| e.to_string())?;
            koch_prefractal_domain(grid, level, SquareFootprint::unit()).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown shape {other:?}")),
    }
}

fn kind_of(problem: &str) -> Result<ProblemKind, String> {
    match problem {
        "dirichlet" => Ok(ProblemKind::Dirichlet),
        "robin" => Ok(ProblemKind::Robin),
        "neumann" => Ok(ProblemKind::Neumann),
        other => Err(format!("unknown problem {other:?}")),
    }
}

fn cell_values(dom: &GridDomain, dofs: &DofMap, values: &[f64]) -> Vec<f64> {
    let g = dom.grid();
    (0..g.cell_count())
        .map(|c| if dom.inside(c) { dofs.cell_dofs(c).iter().map(|&d| values[d]).sum::<f64>() / 4.0 } else { f64::NAN })
        .collect()
}

/// Cells per side of the grid `build_domain` uses.
pub fn grid_side(shape: &str, param: f64, n: usize) -> Result<usize, String> {
    Ok(build_domain(shape, param, n)?.grid().cells_per_side())
}

/// Cell mask, 1 inside.
pub fn raster(shape: &str, param: f64, n: usize) -> Result<Vec<u8>, String> {
    Ok(build_domain(shape, param, n)?.mask().iter().map(|&b| b as u8).collect())
}

/// Weak solution with source `f ≡ 1` and arc measure; Neumann adds `α = 1`.
pub fn solution(shape: &str, param: f64, n: usize, problem: &str, gamma: f64) -> Result<Vec<f64>, String> {
    let dom = build_domain(shape, param, n)?;
    let mu = arc_measure_on_boundary(&dom, 1).map_err(|e| e.to_string())?;
    let f = Field::constant(1.0);
    let spec = match kind_of(problem)? {
        ProblemKind::Dirichlet => ProblemSpec::dirichlet(f),
        ProblemKind::Robin => ProblemSpec::robin(Field::constant(gamma), f),
        ProblemKind::Neumann => ProblemSpec::neumann(f).with_alpha(1.0),
    };
    let u = solve(&dom, &mu, &spec).map_err(|e| e.to_string())?;
    Ok(cell_values(&dom, &u.dofs, &u.values))
}

/// Eigenvalue and cell values of the `index`-th (from 0) eigenfunction.
pub fn mode(shape: &str, param: f64, n: usize, problem: &str, gamma: f64, index: usize) -> Result<(f64, Vec<f64>), String> {
    let dom = build_domain(shape, param, n)?;
    let mu = arc_measure_on_boundary(&dom, 1).map_err(|e| e.to_string())?;
    let sd = eigensolve(&dom, &mu, kind_of(problem)?, &Field::constant(gamma), index + 1).map_err(|e| e.to_string())?;
    Ok((sd.eigenvalues[index], cell_values(&dom, &sd.dofs, &sd.eigenvectors[index])))
}

#[wasm_bindgen]
pub fn domain_side(shape: &str, param: f64, n: usize) -> Result<usize, JsError> {
    grid_side(shape, param, n).map_err(err)
}

#[wasm_bindgen]
pub fn domain_raster(shape: &str, param: f64, n: usize) -> Result<Vec<u8>, JsError> {
    raster(shape, param, n).map_err(err)
}

#[wasm_bindgen]
pub fn solve_field(shape: &str, param: f64, n: usize, problem: &str, gamma: f64) -> Result<Vec<f64>, JsError> {
    solution(shape, param, n, problem, gamma).map_err(err)
}

#[wasm_bindgen]
pub struct Eigenmode {
    eigenvalue: f64,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Eigenmode {
    #[wasm_bindgen(getter)]
    pub fn eigenvalue(&self) -> f64 {
        self.eigenvalue
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[wasm_bindgen]
pub fn eigenmode(shape: &str, param: f64, n: usize, problem: &str, gamma: f64, index: usize) -> Result<Eigenmode, JsError> {
    let (eigenvalue, values) = mode(shape, param, n, problem, gamma, index).map_err(err)?;
    Ok(Eigenmode { eigenvalue, values })
}
