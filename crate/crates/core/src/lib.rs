//! Fictitious-domain finite elements for generalized Dirichlet, Robin and
//! Neumann problems on rough pixel domains inside a fixed confinement box.

pub mod discretization;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod measures;
pub mod scenarios;
pub mod solver;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
