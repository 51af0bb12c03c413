//! Manufactured solution for the potential solver.
//!
//! The membranes are fixed smooth, asymmetric profiles; the exact `ψ` is
//! `sin(π(x+1)/2) sin(πz')` and the forcing is obtained by applying the
//! continuous operator to it.

use std::f64::consts::PI;

use serde::Serialize;

use crate::elliptic::{self, assemble_operator, Column, PotentialField, PotentialSolver};
use crate::error::Result;
use crate::exec::{map_slice, Execution};
use crate::grid::{Grid1D, Grid2D};
use crate::params::Params;
use crate::state::MembraneState;

const UPPER_DEPTH: f64 = 0.15;
const LOWER_RISE: f64 = 0.1;

fn upper(x: f64) -> (f64, f64, f64) {
    (-UPPER_DEPTH * (1.0 - x * x), 2.0 * UPPER_DEPTH * x, 2.0 * UPPER_DEPTH)
}

fn lower(x: f64) -> (f64, f64, f64) {
    let r = LOWER_RISE;
    (
        -1.0 + r * (1.0 + 0.5 * x - x * x - 0.5 * x.powi(3)),
        r * (0.5 - 2.0 * x - 1.5 * x * x),
        r * (-2.0 - 3.0 * x),
    )
}

/// Membrane profiles used by the manufactured problem.
pub fn mms_state(grid: Grid1D) -> MembraneState {
    MembraneState::from_fns(grid, |x| upper(x).0, |x| lower(x).0)
}

pub fn psi_exact(x: f64, z: f64) -> f64 {
    (PI * (x + 1.0) / 2.0).sin() * (PI * z).sin()
}

/// Exact `∂φ̃/∂z'` of `φ̃ = ψ + z'`.
pub fn phi_z_exact(x: f64, z: f64) -> f64 {
    PI * (PI * (x + 1.0) / 2.0).sin() * (PI * z).cos() + 1.0
}

/// `-Δ̃ψ_exact` with exact membrane derivatives.
pub fn forcing_exact(eps: f64, x: f64, z: f64) -> f64 {
    let (u, ux, uxx) = upper(x);
    let (v, vx, vxx) = lower(x);
    let col = Column {
        gap: u - v,
        du: ux,
        dv: vx,
        d2u: uxx,
        d2v: vxx,
    };
    let (cxz, czz, cz) = col.coefficients(eps * eps, z);
    let a = PI * (x + 1.0) / 2.0;
    let b = PI * z;
    let psi = a.sin() * b.sin();
    let psi_xx = -(PI / 2.0).powi(2) * psi;
    let psi_zz = -PI * PI * psi;
    let psi_xz = (PI / 2.0) * PI * a.cos() * b.cos();
    let psi_z = PI * a.sin() * b.cos();
    -(eps * eps * psi_xx + cxz * psi_xz + czz * psi_zz + cz * psi_z)
}

/// Error of one manufactured solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MmsLevel {
    pub nx: usize,
    pub nz: usize,
    pub max_error: f64,
    pub trace_error: f64,
}

/// Solves the manufactured problem and returns the computed field with its errors.
pub fn mms_solve(eps: f64, grid: &Grid2D) -> Result<(PotentialField, MmsLevel)> {
    let s = mms_state(grid.gx);
    let p = Params::new(eps, 0.0, 0.0)?;
    let solver = PotentialSolver::new(assemble_operator(&s, &p, grid)?)?;
    let forcing: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            forcing_exact(eps, grid.gx.x(i), grid.z(j))
        })
        .collect();
    let phi = PotentialField::from_psi(*grid, solver.solve(&forcing)?);
    let max_error = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.coords(k);
            (phi.psi[k] - psi_exact(grid.gx.x(i), grid.z(j))).abs()
        })
        .fold(0.0, f64::max);
    let mut trace_error = 0.0_f64;
    for (edge, z) in [(elliptic::Edge::Lower, 0.0), (elliptic::Edge::Upper, 1.0)] {
        let trace = elliptic::boundary_z_derivative(&phi, edge)?;
        for (i, t) in trace.iter().enumerate() {
            trace_error = trace_error.max((t - phi_z_exact(grid.gx.x(i), z)).abs());
        }
    }
    let level = MmsLevel {
        nx: grid.gx.cells(),
        nz: grid.nz(),
        max_error,
        trace_error,
    };
    Ok((phi, level))
}

/// One row of the refinement table; ratios compare with the previous level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MmsRow {
    pub level: MmsLevel,
    pub ratio: Option<f64>,
    pub trace_ratio: Option<f64>,
}

/// Refinement study over `nx` levels with `nz = nx / 2`.
pub fn mms_study(eps: f64, levels: &[usize], exec: Execution) -> Result<Vec<MmsRow>> {
    let results = map_slice(exec, levels, |&nx| -> Result<MmsLevel> {
        let grid = Grid2D::new(nx, nx / 2)?;
        Ok(mms_solve(eps, &grid)?.1)
    });
    let levels: Vec<MmsLevel> = results.into_iter().collect::<Result<_>>()?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(k, l)| MmsRow {
            level: *l,
            ratio: (k > 0).then(|| levels[k - 1].max_error / l.max_error),
            trace_ratio: (k > 0).then(|| levels[k - 1].trace_error / l.trace_error),
        })
        .collect())
}
