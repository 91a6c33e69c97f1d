//! Numerical toolkit for miniature linear Paul traps: boundary-element electrostatics,
//! pseudopotential analysis, ion dynamics, stray-charge compensation, secular-frequency
//! fits and metalization checks.

pub mod constants;
pub mod characterization_fit;
pub mod compensation;
pub mod dynamics;
pub mod evaporation;
pub mod geometry;
pub mod trap_analysis;
pub mod math;
pub mod field_solver;
pub mod par;

pub use math::{Point3, Vec3};
