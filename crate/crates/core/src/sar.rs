//! The narrow-gap limit: the potential is affine across the gap and the
//! loads reduce to `(u - v)⁻²` on both membranes.

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::continuation::{self, ContinuationControls, ContinuationPath, ContinuationProblem, Linearization};
use crate::dynamics::{evolve, HeatSolver, LoadModel, SimRecord, TimeControls};
use crate::elliptic::TraceLoad;
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::params::{GapParams, Params};
use crate::state::{admissible_iterate, MembraneState};
use crate::steady::ITERATE_SLACK;

/// States of the narrow-gap model share the membrane representation.
pub type SarState = MembraneState;

/// Residual tolerance of the narrow-gap Newton solve.
pub const SAR_TOLERANCE: f64 = 1e-10;

/// `(z - v(x)) / (u(x) - v(x))` with linear interpolation between nodes.
pub fn sar_potential(s: &SarState, x: f64, z: f64) -> Result<f64> {
    let (_, zr) = crate::transform::map_to_reference(x, z, s)?;
    let upper = s.grid.interpolate(&s.u, x);
    let lower = s.grid.interpolate(&s.v, x);
    if z == upper {
        return Ok(1.0);
    }
    if z == lower {
        return Ok(0.0);
    }
    Ok(zr)
}

/// Loads `(1/(u-v)², 1/(u-v)²)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SarLoads;

impl LoadModel for SarLoads {
    fn tag(&self) -> &'static str {
        "sar"
    }

    fn loads(&self, s: &MembraneState) -> Result<TraceLoad> {
        let g: Vec<f64> = s.u.iter().zip(&s.v).map(|(u, v)| (u - v).powi(-2)).collect();
        Ok(TraceLoad { g1: g.clone(), g2: g })
    }
}

/// One IMEX step of the narrow-gap model.
pub fn sar_step(s: &SarState, p: &Params, dt: f64, gap: &GapParams) -> Result<SarState> {
    p.validate()?;
    s.check_shape()?;
    let g = s.gap_min();
    if g < gap.touchdown_gap {
        return Err(Error::SingularGeometry {
            gap: g,
            threshold: gap.touchdown_gap,
        });
    }
    let loads = SarLoads.loads(s)?;
    Ok(HeatSolver::new(s.grid, dt).step(s, &loads, p.lambda, p.mu))
}

/// Evolves the narrow-gap model.
pub fn run_sar_evolution(s0: &SarState, p: &Params, tc: &TimeControls, gap: &GapParams) -> Result<SimRecord> {
    evolve(&SarLoads, s0, p, tc, gap)
}

/// Steady narrow-gap problem `-w'' ± t·c/(u-v)² = 0` along a parameter ray.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SarProblem {
    pub grid: Grid1D,
    /// `(λ, μ) = t · direction`.
    pub direction: (f64, f64),
    /// Keep `v ≡ -1` and solve for `u` alone.
    pub pinned_lower: bool,
}

impl SarProblem {
    fn interior(&self) -> usize {
        self.grid.cells() - 1
    }

    pub fn unknowns(&self, s: &SarState) -> Vec<f64> {
        let m = self.interior();
        if self.pinned_lower {
            s.u[1..=m].to_vec()
        } else {
            (1..=m).flat_map(|i| [s.u[i], s.v[i]]).collect()
        }
    }

    pub fn state(&self, x: &[f64]) -> SarState {
        let mut s = MembraneState::rest(self.grid);
        let m = self.interior();
        for i in 1..=m {
            if self.pinned_lower {
                s.u[i] = x[i - 1];
            } else {
                s.u[i] = x[2 * (i - 1)];
                s.v[i] = x[2 * (i - 1) + 1];
            }
        }
        s
    }

    fn parts(&self, t: f64, x: &[f64]) -> (SarState, Vec<f64>, Vec<f64>) {
        let s = self.state(x);
        let h2 = self.grid.h().powi(2);
        let (a, b) = self.direction;
        let m = self.interior();
        let mut r = Vec::with_capacity(x.len());
        let mut dp = Vec::with_capacity(x.len());
        for i in 1..=m {
            let inv2 = (s.u[i] - s.v[i]).powi(-2);
            r.push(-(s.u[i + 1] - 2.0 * s.u[i] + s.u[i - 1]) / h2 + t * a * inv2);
            dp.push(a * inv2);
            if !self.pinned_lower {
                r.push(-(s.v[i + 1] - 2.0 * s.v[i] + s.v[i - 1]) / h2 - t * b * inv2);
                dp.push(-b * inv2);
            }
        }
        (s, r, dp)
    }

    /// Analytic banded Jacobian.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> BandMatrix {
        let s = self.state(x);
        let h2 = self.grid.h().powi(2);
        let (a, b) = self.direction;
        let m = self.interior();
        let stride = if self.pinned_lower { 1 } else { 2 };
        let band = stride;
        let mut jac = BandMatrix::zeros(m * stride, band, band);
        for i in 1..=m {
            let inv3 = (s.u[i] - s.v[i]).powi(-3);
            let ru = (i - 1) * stride;
            jac.add(ru, ru, 2.0 / h2 - 2.0 * t * a * inv3);
            if i > 1 {
                jac.add(ru, ru - stride, -1.0 / h2);
            }
            if i < m {
                jac.add(ru, ru + stride, -1.0 / h2);
            }
            if !self.pinned_lower {
                let rv = ru + 1;
                jac.add(ru, rv, 2.0 * t * a * inv3);
                jac.add(rv, ru, 2.0 * t * b * inv3);
                jac.add(rv, rv, 2.0 / h2 - 2.0 * t * b * inv3);
                if i > 1 {
                    jac.add(rv, rv - stride, -1.0 / h2);
                }
                if i < m {
                    jac.add(rv, rv + stride, -1.0 / h2);
                }
            }
        }
        jac
    }
}

impl ContinuationProblem for SarProblem {
    fn dim(&self) -> usize {
        self.interior() * if self.pinned_lower { 1 } else { 2 }
    }

    fn residual(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.parts(t, x).1)
    }

    fn linearize(&self, t: f64, x: &[f64]) -> Result<Linearization> {
        let (_, residual, d_param) = self.parts(t, x);
        let solver = self.jacobian(t, x).factor()?;
        Ok(Linearization {
            residual,
            d_param,
            solver: Box::new(solver),
        })
    }

    fn admissible(&self, x: &[f64]) -> bool {
        admissible_iterate(&self.state(x), ITERATE_SLACK)
    }

    fn weight(&self) -> f64 {
        self.grid.h()
    }
}

/// Converged narrow-gap steady state with its Newton history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SarSolution {
    pub state: SarState,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Newton solve of the steady narrow-gap problem at `(λ, μ)`.
pub fn sar_newton(p: &Params, init: &SarState, pinned_lower: bool) -> Result<SarSolution> {
    p.validate()?;
    init.check_shape()?;
    let problem = SarProblem {
        grid: init.grid,
        direction: (p.lambda, p.mu),
        pinned_lower,
    };
    let out = continuation::newton(&problem, 1.0, &problem.unknowns(init), SAR_TOLERANCE, 50)?;
    let mut state = problem.state(&out.x);
    state.snap_to_bounds(ITERATE_SLACK);
    Ok(SarSolution {
        state,
        iterations: out.iterations,
        history: out.history,
    })
}

/// Steady narrow-gap state for both membranes.
pub fn sar_steady_solve(p: &Params, grid: Grid1D, init: &SarState) -> Result<SarState> {
    if init.grid != grid {
        return Err(Error::Structure("initial state is on a different grid".into()));
    }
    Ok(sar_newton(p, init, false)?.state)
}

/// Traces the narrow-gap branch along `(λ, μ) = t·direction` from the rest state.
pub fn sar_branch(
    grid: Grid1D,
    direction: (f64, f64),
    pinned_lower: bool,
    controls: &ContinuationControls,
) -> Result<ContinuationPath> {
    let problem = SarProblem {
        grid,
        direction,
        pinned_lower,
    };
    let c = ContinuationControls {
        tol: controls.tol.min(SAR_TOLERANCE),
        ..*controls
    };
    continuation::trace(&problem, 0.0, &problem.unknowns(&MembraneState::rest(grid)), &c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_potential() {
        let g = Grid1D::new(10).unwrap();
        let rest = MembraneState::rest(g);
        assert!((sar_potential(&rest, 0.0, -0.25).unwrap() - 0.75).abs() < 1e-15);
        let s = MembraneState::from_fns(g, |x| -0.3 * (1.0 - x * x), |x| -1.0 + 0.2 * (1.0 - x * x));
        let x = g.x(3);
        assert_eq!(sar_potential(&s, x, s.u[3]).unwrap(), 1.0);
        assert_eq!(sar_potential(&s, x, s.v[3]).unwrap(), 0.0);
        assert!(sar_potential(&s, 0.0, 0.5).is_err());
    }

    #[test]
    fn rest_reaction_is_unit() {
        let g = Grid1D::new(10).unwrap();
        let l = SarLoads.loads(&MembraneState::rest(g)).unwrap();
        assert!(l.g1.iter().chain(&l.g2).all(|&v| v == 1.0));
        let p = Params::new(0.0, 0.5, 0.25).unwrap();
        let dt = 1e-3;
        let next = sar_step(&MembraneState::rest(g), &p, dt, &GapParams::default()).unwrap();
        // The first implicit step from rest sees the reaction (-λ, +μ) only.
        assert!(next.u[5] < 0.0 && next.u[5] > -dt * 0.5 - 1e-15);
        assert!(next.v[5] > -1.0 && next.v[5] < -1.0 + dt * 0.25 + 1e-15);
    }

    #[test]
    fn touchdown_state_is_rejected() {
        let g = Grid1D::new(10).unwrap();
        let s = MembraneState::from_fns(g, |x| -0.5 * (1.0 - x * x), |x| -1.0 + 0.4999 * (1.0 - x * x));
        let err = sar_step(&s, &Params::new(0.0, 1.0, 1.0).unwrap(), 1e-3, &GapParams::default()).unwrap_err();
        assert!(matches!(err, Error::SingularGeometry { .. }));
    }

    #[test]
    fn unloaded_problem_is_solved_in_one_update() {
        let g = Grid1D::new(20).unwrap();
        let init = MembraneState::from_fns(g, |x| -0.1 * (1.0 - x * x), |x| -1.0 + 0.05 * (1.0 - x * x));
        let sol = sar_newton(&Params::new(0.0, 0.0, 0.0).unwrap(), &init, false).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.state.distance(&MembraneState::rest(g)) < 1e-12);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let g = Grid1D::new(12).unwrap();
        let problem = SarProblem { grid: g, direction: (0.3, 0.2), pinned_lower: false };
        let s = MembraneState::from_fns(g, |x| -0.1 * (1.0 - x * x), |x| -1.0 + 0.05 * (1.0 - x * x) * (1.0 + x));
        let x = problem.unknowns(&s);
        let jac = problem.jacobian(0.8, &x);
        let r0 = problem.residual(0.8, &x).unwrap();
        let h = 1e-7;
        for c in 0..x.len() {
            let mut xp = x.clone();
            xp[c] += h;
            let r1 = problem.residual(0.8, &xp).unwrap();
            for r in 0..x.len() {
                let fd = (r1[r] - r0[r]) / h;
                assert!((fd - jac.get(r, c)).abs() < 1e-4 * (1.0 + fd.abs()), "({r},{c})");
            }
        }
    }

    #[test]
    fn symmetric_parameters_give_mirror_membranes() {
        let g = Grid1D::new(40).unwrap();
        let p = Params::new(0.0, 0.1, 0.1).unwrap();
        let s = sar_steady_solve(&p, g, &MembraneState::rest(g)).unwrap();
        for i in 0..g.len() {
            assert!((s.v[i] + 1.0 + s.u[i]).abs() < 1e-8);
        }
        // Independent oracle: Picard iteration on u'' = λ/(2u+1)² with a dense solve.
        let m = g.cells() - 1;
        let h2 = g.h().powi(2);
        let lap = nalgebra::DMatrix::from_fn(m, m, |r, c| match r.abs_diff(c) {
            0 => -2.0 / h2,
            1 => 1.0 / h2,
            _ => 0.0,
        })
        .lu();
        let mut w = nalgebra::DVector::zeros(m);
        for _ in 0..200 {
            let rhs = w.map(|u: f64| 0.1 / (2.0 * u + 1.0).powi(2));
            w = lap.solve(&rhs).unwrap();
        }
        for i in 1..g.cells() {
            assert!((s.u[i] - w[i - 1]).abs() < 1e-8);
        }
    }
}
