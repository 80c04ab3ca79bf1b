use thiserror::Error;

/// Errors raised by geometry construction, assembly, solves and eigensolves.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain selects no cells")]
    EmptyDomain,

    #[error("domain has {components} 4-connected components, expected 1")]
    Disconnected { components: usize },

    #[error("required core is not contained in the domain")]
    CoreOutsideDomain,

    #[error("grid too coarse for Koch level {level}: h = {h} exceeds {required}")]
    ResolutionTooCoarse { level: usize, h: f64, required: f64 },

    #[error("notch width {width} is below the resolution limit {min}")]
    WidthBelowResolution { width: f64, min: f64 },

    #[error("domains or fields live on different grids")]
    GridMismatch,

    #[error("radius list is empty")]
    EmptyRadii,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("atom {index} at ({x}, {y}) lies outside the closed domain")]
    AtomOutsideDomain { index: usize, x: f64, y: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("Neumann data incompatible: defect {defect:e} exceeds tolerance {tolerance:e}")]
    IncompatibleNeumann { defect: f64, tolerance: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("Dirichlet constraint eliminates every degree of freedom")]
    ConstraintKillsEverything,

    #[error("vector has {found} entries, dof map has {expected}")]
    DofMismatch { expected: usize, found: usize },

    #[error("vector does not vanish on the constrained degrees of freedom")]
    NotInConstraintSpace,

    #[error("vector is not a weak solution (residual {residual:e})")]
    NotASolution { residual: f64 },

    #[error("eigensolver did not converge after {restarts} restarts")]
    ConvergenceFailure { restarts: usize },

    #[error("interval endpoint {endpoint} is within 1e-6 of eigenvalue {eigenvalue}")]
    IntervalCutsEigenvalue { endpoint: f64, eigenvalue: f64 },

    #[error("interval may contain eigenvalues beyond the {count} computed")]
    InsufficientCount { count: usize },

    #[error("constraint functional vanishes")]
    DegenerateConstraint,

    #[error("no admissible candidate")]
    NoAdmissibleCandidate,

    #[error("need at least {needed} admissible candidates, found {found}")]
    TooFewCandidates { needed: usize, found: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
