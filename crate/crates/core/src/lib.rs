//! Self-diffusion matrices of the tagged-particle symmetric exclusion
//! process on finite periodic lattices, and a finite-volume solver for the
//! resulting two-species cross-diffusion system.
//!
//! The pipeline runs lattice -> functional -> (lsq | als) -> selfdiff -> fvm.

pub mod als;
pub mod error;
pub mod functional;
pub mod fvm;
pub mod lattice;
pub mod lsq;
pub mod selfdiff;
pub mod spline;
pub mod validate;

pub use als::{multi_start, run_als, AlsReport, AlsSettings, MultiStart, RestartStats, SeparableFunction};
pub use error::{Error, Result};
pub use functional::{ConfigFunction, DenseFunction, Direction};
pub use fvm::{Closure, Mesh, NewtonSettings, SimConfig, SimState, Trajectory};
pub use lattice::{Configuration, Jump, LatticeSpec};
pub use lsq::{solve_lsq, LsqSettings, LsqSolution};
pub use selfdiff::{assemble_levels, AssembleSettings, Method, SelfDiffusionModel};
pub use spline::CubicSpline;
