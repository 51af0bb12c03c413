//! Simulation and analysis of a two-membrane electrostatic actuator: a
//! potential problem in the gap between two elastic membranes, coupled to
//! heat-type equations for the membrane displacements.
//!
//! The moving gap is mapped onto the fixed rectangle `[-1, 1] × [0, 1]`;
//! all solvers work on that reference domain.

pub mod banded;
pub mod config;
pub mod continuation;
pub mod corpus;
pub mod diagnostics;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod grid;
pub mod mms;
pub mod output;
pub mod params;
pub mod sar;
pub mod state;
pub mod steady;
pub mod transform;

pub use config::ExperimentConfig;
pub use elliptic::{
    assemble_operator, assemble_rhs, boundary_z_derivative, membrane_loads, solve_potential, Edge,
    OperatorAssembly, PotentialField, PotentialSolver, TraceLoad,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use experiments::{run, Mode, RunReport};
pub use grid::{Grid1D, Grid2D};
pub use params::{physical_to_dimensionless, GapParams, Params, PhysicalParams};
pub use state::{validate_state, MembraneState, StateClass};
pub use transform::{map_from_reference, map_to_reference, rasterize_physical, PhysicalGrid, PhysicalSample};
