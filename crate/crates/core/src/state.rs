//! Membrane displacement snapshots and their admissibility classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::params::GapParams;

/// Sampled displacement pair `(u, v)` at time `t`.
///
/// Boundary values are pinned: `u(±1) = 0`, `v(±1) = -1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembraneState {
    pub grid: Grid1D,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

/// Outcome of [`validate_state`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateClass {
    Admissible,
    Touchdown,
    BoundaryViolation,
}

impl MembraneState {
    /// The undeflected configuration `u ≡ 0`, `v ≡ -1`.
    pub fn rest(grid: Grid1D) -> Self {
        MembraneState {
            grid,
            u: vec![0.0; grid.len()],
            v: vec![-1.0; grid.len()],
            t: 0.0,
        }
    }

    /// Samples `u` and `v` from closures and pins the boundary values.
    pub fn from_fns(grid: Grid1D, u: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64) -> Self {
        let x = grid.nodes();
        let mut s = MembraneState {
            grid,
            u: x.iter().map(|&x| u(x)).collect(),
            v: x.iter().map(|&x| v(x)).collect(),
            t: 0.0,
        };
        s.pin();
        s
    }

    pub fn from_samples(grid: Grid1D, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(Error::Structure(format!(
                "expected {} samples, got u: {}, v: {}",
                grid.len(),
                u.len(),
                v.len()
            )));
        }
        Ok(MembraneState { grid, u, v, t: 0.0 })
    }

    /// Re-imposes `u(±1) = 0` and `v(±1) = -1`.
    pub fn pin(&mut self) {
        let n = self.grid.cells();
        self.u[0] = 0.0;
        self.u[n] = 0.0;
        self.v[0] = -1.0;
        self.v[n] = -1.0;
    }

    pub fn gap(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(u, v)| u - v).collect()
    }

    pub fn gap_min(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| u - v)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn gap_max(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| u - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Max-norm distance `‖u - u'‖∞ + ‖v - v'‖∞`.
    pub fn distance(&self, other: &MembraneState) -> f64 {
        max_abs_diff(&self.u, &other.u) + max_abs_diff(&self.v, &other.v)
    }

    /// Largest node-reflection defect `max |w(x_i) - w(-x_i)|` over both membranes.
    pub fn evenness_residual(&self) -> f64 {
        let g = self.grid;
        (0..g.len())
            .map(|i| {
                let m = g.mirror(i);
                (self.u[i] - self.u[m]).abs().max((self.v[i] - self.v[m]).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Membrane exchange `U = -v - 1`, `V = -u - 1`.
    pub fn swapped(&self) -> MembraneState {
        MembraneState {
            grid: self.grid,
            u: self.v.iter().map(|v| -v - 1.0).collect(),
            v: self.u.iter().map(|u| -u - 1.0).collect(),
            t: self.t,
        }
    }

    /// Mirror image `x -> -x`.
    pub fn reflected(&self) -> MembraneState {
        let g = self.grid;
        MembraneState {
            grid: g,
            u: (0..g.len()).map(|i| self.u[g.mirror(i)]).collect(),
            v: (0..g.len()).map(|i| self.v[g.mirror(i)]).collect(),
            t: self.t,
        }
    }

    /// Clamps values that exceed `u <= 0` or `v >= -1` by at most `tol`.
    pub fn snap_to_bounds(&mut self, tol: f64) {
        for u in &mut self.u {
            if *u > 0.0 && *u <= tol {
                *u = 0.0;
            }
        }
        for v in &mut self.v {
            if *v < -1.0 && *v >= -1.0 - tol {
                *v = -1.0;
            }
        }
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        if self.u.len() != self.grid.len() || self.v.len() != self.grid.len() {
            return Err(Error::Structure(format!(
                "state carries {} / {} samples on a grid with {} nodes",
                self.u.len(),
                self.v.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Classifies a state: touchdown if the minimum gap falls below the
/// threshold, boundary violation if pinning or `-1 <= v < u <= 0` fails.
pub fn validate_state(s: &MembraneState, g: &GapParams) -> Result<StateClass> {
    s.check_shape()?;
    if s.gap_min() < g.touchdown_gap {
        return Ok(StateClass::Touchdown);
    }
    let n = s.grid.cells();
    let pinned = s.u[0] == 0.0 && s.u[n] == 0.0 && s.v[0] == -1.0 && s.v[n] == -1.0;
    let ordered = (1..n).all(|i| -1.0 <= s.v[i] && s.v[i] < s.u[i] && s.u[i] <= 0.0);
    if pinned && ordered && s.is_finite() {
        Ok(StateClass::Admissible)
    } else {
        Ok(StateClass::BoundaryViolation)
    }
}

/// Admissibility of a solver iterate: bounds hold up to `tol` and the gap
/// stays above the default touchdown threshold.
pub(crate) fn admissible_iterate(s: &MembraneState, tol: f64) -> bool {
    s.is_finite()
        && s.gap_min() >= crate::params::DEFAULT_TOUCHDOWN_GAP
        && s.u.iter().all(|&u| u <= tol)
        && s.v.iter().all(|&v| v >= -1.0 - tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid1D {
        Grid1D::new(20).unwrap()
    }

    #[test]
    fn rest_state_is_admissible() {
        let s = MembraneState::rest(grid());
        assert_eq!(validate_state(&s, &GapParams::default()).unwrap(), StateClass::Admissible);
        assert_eq!(s.gap_min(), 1.0);
    }

    #[test]
    fn narrow_lower_membrane_is_touchdown() {
        let g = grid();
        let mut s = MembraneState::rest(g);
        s.v[g.mid()] = -1e-4;
        assert_eq!(validate_state(&s, &GapParams::default()).unwrap(), StateClass::Touchdown);
    }

    #[test]
    fn positive_upper_membrane_violates_sign() {
        let g = grid();
        let mut s = MembraneState::rest(g);
        s.u[g.mid()] = 0.1;
        assert_eq!(
            validate_state(&s, &GapParams::default()).unwrap(),
            StateClass::BoundaryViolation
        );
    }

    #[test]
    fn unpinned_boundary_is_a_violation() {
        let mut s = MembraneState::rest(grid());
        s.v[0] = -0.9;
        assert_eq!(
            validate_state(&s, &GapParams::default()).unwrap(),
            StateClass::BoundaryViolation
        );
    }

    #[test]
    fn mismatched_lengths_are_structural_errors() {
        let mut s = MembraneState::rest(grid());
        s.v.pop();
        assert!(matches!(validate_state(&s, &GapParams::default()), Err(Error::Structure(_))));
        assert!(MembraneState::from_samples(grid(), vec![0.0; 3], vec![0.0; 21]).is_err());
    }

    #[test]
    fn swap_is_an_involution_on_rest() {
        let s = MembraneState::rest(grid());
        assert_eq!(s.swapped(), s);
    }

    proptest::proptest! {
        #[test]
        fn classification_is_total_and_pure(a in -0.5f64..0.2, b in -0.2f64..0.5, td in 1e-4f64..0.1) {
            let s = MembraneState::from_fns(grid(), |x| a * (1.0 - x * x), |x| -1.0 + b * (1.0 - x * x));
            let g = GapParams::new(0.2, td).unwrap();
            let first = validate_state(&s, &g).unwrap();
            let second = validate_state(&s, &g).unwrap();
            proptest::prop_assert_eq!(first, second);
            let gap_min = 1.0 + (a - b).min(0.0);
            proptest::prop_assert_eq!(first == StateClass::Touchdown, gap_min < td);
            if a <= 0.0 && b >= 0.0 && 1.0 + a - b >= td {
                proptest::prop_assert_eq!(first, StateClass::Admissible);
            }
        }
    }
}
