//! Cell-centred finite volumes for the two-species cross-diffusion system
//! with harmonic two-point fluxes, backward Euler in time and Newton's
//! method for the nonlinear steps.

pub mod mesh;
pub mod newton;
pub mod scheme;
pub mod sim;

pub use mesh::{Cell, Edge, EdgeKind, Mesh};
pub use newton::{newton_solve, solve_sparse, NewtonOutcome, NewtonSettings};
pub use scheme::{
    assemble, cell_coefficients, edge_flux, jacobian, residual, transmissibility, AffineClosure, AssemblyStats,
    Closure, Coefficients, Triplets, DEFAULT_RHO_FLOOR,
};
pub use sim::{
    initial_state, time_loop, write_diagnostics, write_snapshot, Diagnostics, InitialCondition, MeshSource,
    SimConfig, SimState, Snapshot, Trajectory,
};
