//! The coordinate map between the physical gap `v(x) < z < u(x)` and the
//! reference rectangle, and rasterization of reference-domain fields.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::elliptic::PotentialField;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::grid::Grid1D;
use crate::state::MembraneState;

/// Distance from a membrane within which a point still counts as inside.
pub const INSIDE_TOLERANCE: f64 = 1e-12;

/// One raster node in physical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSample {
    pub x: f64,
    pub z: f64,
    pub value: f64,
    pub inside: bool,
}

/// Uniform raster over `[-1, 1] × [-1, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalGrid {
    pub gx: Grid1D,
    pub nz: usize,
}

impl PhysicalGrid {
    pub fn new(gx: Grid1D, nz: usize) -> Result<Self> {
        if nz == 0 {
            return Err(crate::error::invalid("nz", "raster needs at least one z-cell"));
        }
        Ok(PhysicalGrid { gx, nz })
    }

    pub fn z(&self, j: usize) -> f64 {
        if j == self.nz {
            0.0
        } else {
            -1.0 + j as f64 / self.nz as f64
        }
    }

    pub fn len(&self) -> usize {
        self.gx.len() * (self.nz + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn membranes_at(s: &MembraneState, x: f64) -> (f64, f64) {
    (s.grid.interpolate(&s.u, x), s.grid.interpolate(&s.v, x))
}

/// `T(x, z) = (x, (z - v(x)) / (u(x) - v(x)))`.
pub fn map_to_reference(x: f64, z: f64, s: &MembraneState) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain { x, z, lower: -1.0, upper: 1.0 });
    }
    let (upper, lower) = membranes_at(s, x);
    if z < lower - INSIDE_TOLERANCE || z > upper + INSIDE_TOLERANCE || upper <= lower {
        return Err(Error::Domain { x, z, lower, upper });
    }
    Ok((x, ((z - lower) / (upper - lower)).clamp(0.0, 1.0)))
}

/// `T⁻¹(x', z') = (x', z'(u - v) + v)`.
pub fn map_from_reference(x: f64, zr: f64, s: &MembraneState) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&zr) {
        return Err(Error::Domain { x, z: zr, lower: 0.0, upper: 1.0 });
    }
    let (upper, lower) = membranes_at(s, x);
    Ok((x, zr * (upper - lower) + lower))
}

/// Samples `φ̃ ∘ T` on a physical raster; nodes outside the gap carry 0.
pub fn rasterize_physical(
    phi: &PotentialField,
    s: &MembraneState,
    target: &PhysicalGrid,
) -> Vec<PhysicalSample> {
    rasterize_with(phi, s, target, Execution::default())
}

pub fn rasterize_with(
    phi: &PotentialField,
    s: &MembraneState,
    target: &PhysicalGrid,
    exec: Execution,
) -> Vec<PhysicalSample> {
    let nz1 = target.nz + 1;
    map_indexed(exec, target.len(), |k| {
        let x = target.gx.x(k / nz1);
        let z = target.z(k % nz1);
        match map_to_reference(x, z, s) {
            Ok((xr, zr)) => PhysicalSample {
                x,
                z,
                value: phi.grid.interpolate(&phi.phi_tilde, xr, zr),
                inside: true,
            },
            Err(_) => PhysicalSample { x, z, value: 0.0, inside: false },
        }
    })
}

/// Writes raster samples as `x,z,value,inside` CSV.
pub fn write_raster_csv<W: Write>(samples: &[PhysicalSample], mut out: W) -> Result<()> {
    writeln!(out, "x,z,value,inside")?;
    for p in samples {
        writeln!(out, "{:.16e},{:.16e},{:.16e},{}", p.x, p.z, p.value, p.inside as u8)?;
    }
    Ok(())
}
