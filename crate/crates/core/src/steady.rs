//! Steady states of the full model, their linear stability, branches
//! along parameter rays, and the closed-form parameter thresholds.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::continuation::{
    self, ContinuationControls, ContinuationProblem, DenseLu, Linearization, NewtonOutcome,
};
use crate::elliptic::{
    assemble_operator, assemble_rhs, edge_trace, interior_column, loads_from_traces, stencil_at,
    Edge, PotentialSolver, TraceLoad,
};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::grid::Grid2D;
use crate::params::Params;
use crate::state::{admissible_iterate, MembraneState};

/// Residual tolerance of the full steady Newton solve.
pub const STEADY_TOLERANCE: f64 = 1e-9;
/// Relative size of the finite-difference perturbation, in units of the minimum gap.
pub const FD_RELATIVE_STEP: f64 = 1e-6;
/// Roundoff slack on the sign constraints of Newton iterates.
pub(crate) const ITERATE_SLACK: f64 = 1e-12;

/// Full-model steady problem along `(λ, μ) = t·direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyProblem {
    pub grid: Grid2D,
    pub eps: f64,
    pub direction: (f64, f64),
    /// Keep `v ≡ -1` and solve for `u` alone.
    pub pinned_lower: bool,
    pub exec: Execution,
}

/// Residual and loads at one state, with the factored potential operator.
struct Evaluation {
    state: MembraneState,
    solver: PotentialSolver,
    psi: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    loads: TraceLoad,
}

impl SteadyProblem {
    pub fn new(grid: Grid2D, eps: f64, direction: (f64, f64)) -> Self {
        SteadyProblem {
            grid,
            eps,
            direction,
            pinned_lower: false,
            exec: Execution::default(),
        }
    }

    fn interior(&self) -> usize {
        self.grid.gx.cells() - 1
    }

    pub fn params(&self, t: f64) -> Params {
        Params {
            eps: self.eps,
            lambda: t * self.direction.0,
            mu: t * self.direction.1,
        }
    }

    pub fn unknowns(&self, s: &MembraneState) -> Vec<f64> {
        let m = self.interior();
        let mut x = s.u[1..=m].to_vec();
        if !self.pinned_lower {
            x.extend_from_slice(&s.v[1..=m]);
        }
        x
    }

    pub fn state(&self, x: &[f64]) -> MembraneState {
        let m = self.interior();
        let mut s = MembraneState::rest(self.grid.gx);
        s.u[1..=m].copy_from_slice(&x[..m]);
        if !self.pinned_lower {
            s.v[1..=m].copy_from_slice(&x[m..2 * m]);
        }
        s
    }

    fn evaluate(&self, s: MembraneState) -> Result<Evaluation> {
        let p = Params { eps: self.eps, lambda: 0.0, mu: 0.0 };
        let forcing = assemble_rhs(&s, &p, &self.grid)?;
        let solver = PotentialSolver::new(assemble_operator(&s, &p, &self.grid)?)?;
        let psi = solver.solve(&forcing)?;
        let phi = crate::elliptic::PotentialField::from_psi(self.grid, psi);
        let upper = edge_trace(&self.grid, &phi.phi_tilde, Edge::Upper);
        let lower = edge_trace(&self.grid, &phi.phi_tilde, Edge::Lower);
        let loads = loads_from_traces(&s, self.eps, &upper, &lower);
        Ok(Evaluation {
            state: s,
            solver,
            psi: phi.psi,
            upper,
            lower,
            loads,
        })
    }

    fn residual_of(&self, t: f64, ev: &Evaluation) -> Vec<f64> {
        let p = self.params(t);
        let (u, v) = steady_residual_parts(&ev.state, &ev.loads, &p);
        let mut r = u;
        if !self.pinned_lower {
            r.extend(v);
        }
        r
    }

    /// Derivative of the interior loads `(g₁, g₂)` with respect to each unknown.
    ///
    /// Each column perturbs one displacement, forms the change of the
    /// discrete potential residual on the affected stencil columns, and
    /// corrects `ψ` with the factorization of the unperturbed operator.
    fn load_jacobian(&self, ev: &Evaluation) -> Vec<Vec<f64>> {
        let m = self.interior();
        let g = self.grid;
        let h = g.gx.h();
        let nz = g.nz();
        let eps2 = self.eps * self.eps;
        let step = FD_RELATIVE_STEP * ev.state.gap_min();
        let base = &ev.state;
        let columns = if self.pinned_lower { m } else { 2 * m };
        map_indexed(self.exec, columns, |c| {
            let node = c % m + 1;
            let mut s = base.clone();
            if c < m {
                s.u[node] += step;
            } else {
                s.v[node] += step;
            }
            let mut dr = vec![0.0; g.len()];
            for i in node.saturating_sub(1).max(1)..=(node + 1).min(m) {
                let col = interior_column(&s.u, &s.v, h, i);
                for j in 1..nz {
                    let k = g.index(i, j);
                    let (cxz, czz, cz) = col.coefficients(eps2, g.z(j));
                    let applied: f64 = stencil_at(&g, eps2, cxz, czz, cz, i, j)
                        .iter()
                        .map(|&(n, w)| w * ev.psi[n])
                        .sum();
                    let base_res = -ev.solver.stencil.cz[k] - ev.solver.apply_at(&ev.psi, i, j);
                    dr[k] = (-cz - applied) - base_res;
                }
            }
            let dpsi = ev.solver.solve_raw(&dr);
            let d_up = edge_trace(&g, &dpsi, Edge::Upper);
            let d_lo = edge_trace(&g, &dpsi, Edge::Lower);
            let upper: Vec<f64> = ev.upper.iter().zip(&d_up).map(|(a, b)| a + b).collect();
            let lower: Vec<f64> = ev.lower.iter().zip(&d_lo).map(|(a, b)| a + b).collect();
            let loads = loads_from_traces(&s, self.eps, &upper, &lower);
            let mut out = Vec::with_capacity(2 * m);
            out.extend((1..=m).map(|i| (loads.g1[i] - ev.loads.g1[i]) / step));
            out.extend((1..=m).map(|i| (loads.g2[i] - ev.loads.g2[i]) / step));
            out
        })
    }

    /// Dense Jacobian `A_h + diag(λ, -μ)·Dg`, residual and `∂R/∂t`.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, Vec<f64>)> {
        let ev = self.evaluate(self.state(x))?;
        let residual = self.residual_of(t, &ev);
        let p = self.params(t);
        let m = self.interior();
        let dim = self.dim();
        let h2 = self.grid.gx.h().powi(2);
        let mut jac = DMatrix::zeros(dim, dim);
        let blocks = if self.pinned_lower { 1 } else { 2 };
        for b in 0..blocks {
            for i in 0..m {
                let r = b * m + i;
                jac[(r, r)] = 2.0 / h2;
                if i > 0 {
                    jac[(r, r - 1)] = -1.0 / h2;
                }
                if i + 1 < m {
                    jac[(r, r + 1)] = -1.0 / h2;
                }
            }
        }
        if p.lambda != 0.0 || p.mu != 0.0 {
            let dg = self.load_jacobian(&ev);
            for (c, col) in dg.iter().enumerate() {
                for i in 0..m {
                    jac[(i, c)] += p.lambda * col[i];
                    if !self.pinned_lower {
                        jac[(m + i, c)] -= p.mu * col[m + i];
                    }
                }
            }
        }
        let (a, b) = self.direction;
        let mut d_param: Vec<f64> = (1..=m).map(|i| a * ev.loads.g1[i]).collect();
        if !self.pinned_lower {
            d_param.extend((1..=m).map(|i| -b * ev.loads.g2[i]));
        }
        Ok((residual, jac, d_param))
    }
}

impl ContinuationProblem for SteadyProblem {
    fn dim(&self) -> usize {
        self.interior() * if self.pinned_lower { 1 } else { 2 }
    }

    fn residual(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluate(self.state(x))?;
        Ok(self.residual_of(t, &ev))
    }

    fn linearize(&self, t: f64, x: &[f64]) -> Result<Linearization> {
        let (residual, jac, d_param) = self.jacobian(t, x)?;
        Ok(Linearization {
            residual,
            d_param,
            solver: Box::new(DenseLu::new(jac)?),
        })
    }

    fn admissible(&self, x: &[f64]) -> bool {
        admissible_iterate(&self.state(x), ITERATE_SLACK)
    }

    fn weight(&self) -> f64 {
        self.grid.gx.h()
    }
}

fn steady_residual_parts(s: &MembraneState, loads: &TraceLoad, p: &Params) -> (Vec<f64>, Vec<f64>) {
    let n = s.grid.cells();
    let h2 = s.grid.h().powi(2);
    let d2 = |w: &[f64], i: usize| (w[i + 1] - 2.0 * w[i] + w[i - 1]) / h2;
    let ru = (1..n).map(|i| -d2(&s.u, i) + p.lambda * loads.g1[i]).collect();
    let rv = (1..n).map(|i| -d2(&s.v, i) - p.mu * loads.g2[i]).collect();
    (ru, rv)
}

/// Residual pair on the interior nodes, each with zero boundary entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyResidual {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl SteadyResidual {
    pub fn max_norm(&self) -> f64 {
        continuation::max_norm(&self.upper).max(continuation::max_norm(&self.lower))
    }
}

/// `(-u_xx + λ g₁, -v_xx - μ g₂)` on the nodes of `s.grid` (zero at `x = ±1`).
pub fn steady_residual(s: &MembraneState, p: &Params, grid: &Grid2D) -> Result<SteadyResidual> {
    p.require_full_model()?;
    let (_, loads) = crate::elliptic::potential_and_loads(s, p, grid)?;
    let (ru, rv) = steady_residual_parts(s, &loads, p);
    let pad = |r: Vec<f64>| {
        let mut out = vec![0.0];
        out.extend(r);
        out.push(0.0);
        out
    };
    Ok(SteadyResidual {
        upper: pad(ru),
        lower: pad(rv),
    })
}

/// A steady state with its stability information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub lambda: f64,
    pub mu: f64,
    pub state: MembraneState,
    /// Largest real part of the spectrum of the negated linearization.
    pub spectral_bound: f64,
    pub newton_iters: usize,
    pub fold_flag: bool,
    pub residual: f64,
}

/// Newton controls for the full steady problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonControls {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for NewtonControls {
    fn default() -> Self {
        NewtonControls {
            tol: STEADY_TOLERANCE,
            max_iter: 50,
            exec: Execution::default(),
        }
    }
}

/// Damped Newton on the steady residual, followed by the stability bound.
pub fn steady_newton(p: &Params, init: &MembraneState, grid: &Grid2D) -> Result<BranchPoint> {
    steady_newton_with(p, init, grid, &NewtonControls::default()).map(|(bp, _)| bp)
}

/// As [`steady_newton`], also returning the Newton history.
pub fn steady_newton_with(
    p: &Params,
    init: &MembraneState,
    grid: &Grid2D,
    controls: &NewtonControls,
) -> Result<(BranchPoint, NewtonOutcome)> {
    p.require_full_model()?;
    init.check_shape()?;
    if init.grid != grid.gx {
        return Err(Error::Structure("initial state is on a different grid".into()));
    }
    let problem = SteadyProblem {
        exec: controls.exec,
        ..SteadyProblem::new(*grid, p.eps, (p.lambda, p.mu))
    };
    let out = continuation::newton(&problem, 1.0, &problem.unknowns(init), controls.tol, controls.max_iter)?;
    let mut state = problem.state(&out.x);
    state.snap_to_bounds(ITERATE_SLACK);
    let (_, jac, _) = problem.jacobian(1.0, &out.x)?;
    let bp = BranchPoint {
        lambda: p.lambda,
        mu: p.mu,
        state,
        spectral_bound: spectral_bound(&jac)?,
        newton_iters: out.iterations,
        fold_flag: false,
        residual: *out.history.last().unwrap_or(&0.0),
    };
    Ok((bp, out))
}

/// Largest real part of the eigenvalues of `-jac`.
pub fn spectral_bound(jac: &DMatrix<f64>) -> Result<f64> {
    let neg = -jac.clone();
    let schur = nalgebra::linalg::Schur::try_new(neg, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let eig = schur.complex_eigenvalues();
    let bound = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if !bound.is_finite() {
        return Err(Error::Eigen("non-finite spectrum".into()));
    }
    Ok(bound)
}

/// Spectral bound of the linearization at a branch point.
pub fn linearization_spectrum(bp: &BranchPoint, p: &Params, grid: &Grid2D) -> Result<f64> {
    p.require_full_model()?;
    let problem = SteadyProblem::new(*grid, p.eps, (bp.lambda, bp.mu));
    let (_, jac, _) = problem.jacobian(1.0, &problem.unknowns(&bp.state))?;
    spectral_bound(&jac)
}

/// An ordered set of steady states along a parameter ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyBranch {
    /// `μ / λ` along the ray.
    pub ratio: f64,
    pub pinned_lower: bool,
    pub points: Vec<BranchPoint>,
    /// Parabolic estimate of `λ` at the fold, if one was passed.
    pub fold_lambda: Option<f64>,
    /// Index after which the spectral bound first becomes non-negative.
    pub spectral_crossing: Option<usize>,
    pub termination: String,
}

/// Branch tracing options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchControls {
    pub continuation: ContinuationControls,
    pub pinned_lower: bool,
    pub spectrum: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for BranchControls {
    fn default() -> Self {
        BranchControls {
            continuation: ContinuationControls::default(),
            pinned_lower: false,
            spectrum: true,
            exec: Execution::default(),
        }
    }
}

/// Traces the steady branch along `μ = ratio·λ` starting from the rest state.
pub fn trace_branch(ratio: f64, p0: &Params, grid: &Grid2D, controls: &BranchControls) -> Result<SteadyBranch> {
    p0.require_full_model()?;
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(invalid("ratio", "must be finite and >= 0"));
    }
    let problem = SteadyProblem {
        pinned_lower: controls.pinned_lower,
        exec: controls.exec,
        ..SteadyProblem::new(*grid, p0.eps, (1.0, if controls.pinned_lower { 0.0 } else { ratio }))
    };
    let c = ContinuationControls {
        tol: controls.continuation.tol.max(STEADY_TOLERANCE),
        ..controls.continuation
    };
    let path = continuation::trace(&problem, 0.0, &problem.unknowns(&MembraneState::rest(grid.gx)), &c)?;
    let bounds: Vec<f64> = if controls.spectrum {
        path.points
            .iter()
            .map(|pt| {
                let (_, jac, _) = problem.jacobian(pt.t, &pt.x)?;
                spectral_bound(&jac)
            })
            .collect::<Result<_>>()?
    } else {
        vec![f64::NAN; path.points.len()]
    };
    let points: Vec<BranchPoint> = path
        .points
        .iter()
        .zip(&bounds)
        .map(|(pt, &sb)| {
            let p = problem.params(pt.t);
            BranchPoint {
                lambda: p.lambda,
                mu: p.mu,
                state: {
                    let mut s = problem.state(&pt.x);
                    s.snap_to_bounds(ITERATE_SLACK);
                    s
                },
                spectral_bound: sb,
                newton_iters: pt.newton_iters,
                fold_flag: pt.fold,
                residual: pt.residual,
            }
        })
        .collect();
    let spectral_crossing = bounds.windows(2).position(|w| w[0] < 0.0 && w[1] >= 0.0);
    Ok(SteadyBranch {
        ratio,
        pinned_lower: controls.pinned_lower,
        points,
        fold_lambda: path.fold_value,
        spectral_crossing,
        termination: path.termination,
    })
}

/// `π⁴ (1 + ε²)²`.
pub fn m2_threshold(eps: f64) -> f64 {
    PI.powi(4) * (1.0 + eps * eps).powi(2)
}

/// `1 + ln(cos(εξ)) / (ε²ξ)`.
pub fn lambda_eps(eps: f64, xi: f64) -> f64 {
    let y = eps * xi;
    let ln_cos = (-2.0 * (y / 2.0).sin().powi(2)).ln_1p();
    1.0 + ln_cos / (eps * eps * xi)
}

/// The unique zero of `lambda_eps` on `(0, π/(2ε))`, by bisection.
pub fn xi0(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps", "must be positive"));
    }
    let upper = PI / (2.0 * eps);
    let (mut lo, mut hi) = (0.0_f64, upper);
    // lambda_eps -> 1 as ξ -> 0 and -> -∞ as εξ -> π/2.
    while hi - lo > 1e-10 * hi.abs().max(f64::MIN_POSITIVE) * 0.5 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lambda_eps(eps, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Grid2D {
        Grid2D::new(16, 8).unwrap()
    }

    #[test]
    fn thresholds() {
        assert_eq!(m2_threshold(0.0), PI.powi(4));
        assert!((m2_threshold(1.0) - 4.0 * PI.powi(4)).abs() < 1e-10);
        assert!(m2_threshold(0.2) > m2_threshold(0.1));
        for eps in [0.01, 0.1, 0.5] {
            let x = xi0(eps).unwrap();
            assert!(x > 0.0 && x < PI / (2.0 * eps));
            assert!(lambda_eps(eps, x).abs() < 1e-8);
        }
        assert!((xi0(0.01).unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn small_eps_expansion_of_the_zero() {
        // ln cos y = -y²/2 - y⁴/12 - ..., so Λ_ε(ξ) ≈ 1 - ξ/2 - ε²ξ³/12 and
        // ξ₀ ≈ 2 - (4/3)ε².
        let eps: f64 = 0.1;
        assert!((xi0(eps).unwrap() - (2.0 - 4.0 / 3.0 * eps * eps)).abs() < 1e-3);
    }

    #[test]
    fn rest_residual() {
        let grid = g();
        let s = MembraneState::rest(grid.gx);
        let r = steady_residual(&s, &Params::new(0.1, 0.0, 0.0).unwrap(), &grid).unwrap();
        assert_eq!(r.max_norm(), 0.0);
        let r = steady_residual(&s, &Params::new(0.1, 0.3, 0.2).unwrap(), &grid).unwrap();
        for i in 1..16 {
            assert!((r.upper[i] - 0.3).abs() < 1e-12);
            assert!((r.lower[i] + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn unloaded_newton_takes_one_update() {
        let grid = g();
        let init = MembraneState::from_fns(grid.gx, |x| -0.1 * (1.0 - x * x), |x| -1.0 + 0.1 * (1.0 - x * x));
        let bp = steady_newton(&Params::new(0.1, 0.0, 0.0).unwrap(), &init, &grid).unwrap();
        let (_, out) = steady_newton_with(&Params::new(0.1, 0.0, 0.0).unwrap(), &init, &grid, &NewtonControls::default()).unwrap();
        assert_eq!(bp.newton_iters, 1, "{:?}", out.history);
        assert!(bp.state.distance(&MembraneState::rest(grid.gx)) < 1e-12);
        // Discrete Dirichlet eigenvalue on (-1, 1).
        let h = grid.gx.h();
        let lam1 = 4.0 / (h * h) * (PI * h / 4.0).sin().powi(2);
        assert!((bp.spectral_bound + lam1).abs() < 1e-8);
    }

    #[test]
    fn load_jacobian_matches_full_resolves() {
        let grid = Grid2D::new(12, 8).unwrap();
        let problem = SteadyProblem::new(grid, 0.4, (0.7, 0.5));
        let s = MembraneState::from_fns(grid.gx, |x| -0.15 * (1.0 - x * x) * (1.0 + 0.4 * x), |x| -1.0 + 0.1 * (1.0 - x * x));
        let x = problem.unknowns(&s);
        let (r0, jac, _) = problem.jacobian(1.0, &x).unwrap();
        let h = 1e-6;
        for c in [0, 5, 11, 14, 21] {
            let mut xp = x.clone();
            xp[c] += h;
            let r1 = problem.residual(1.0, &xp).unwrap();
            for r in 0..x.len() {
                let fd = (r1[r] - r0[r]) / h;
                assert!((fd - jac[(r, c)]).abs() < 1e-4 * (1.0 + fd.abs()), "({r},{c}) {fd} {}", jac[(r, c)]);
            }
        }
    }

    #[test]
    fn small_loads_converge_to_stable_even_convex_state() {
        let grid = g();
        let p = Params::new(0.1, 0.1, 0.1).unwrap();
        let (bp, out) = steady_newton_with(&p, &MembraneState::rest(grid.gx), &grid, &NewtonControls::default()).unwrap();
        assert!(bp.spectral_bound < 0.0);
        assert!(bp.state.evenness_residual() < 1e-10);
        let h2 = grid.gx.h().powi(2);
        for i in 1..16 {
            let s = &bp.state;
            assert!(s.u[i + 1] - 2.0 * s.u[i] + s.u[i - 1] >= 0.0);
            assert!(s.v[i + 1] - 2.0 * s.v[i] + s.v[i - 1] <= 0.0);
            let _ = h2;
        }
        let h = &out.history;
        let n = h.len();
        assert!(h[n - 1] <= 1e-9);
        assert!(h[n - 1] <= 100.0 * h[n - 2] * h[n - 2] + 1e-12);
    }

    #[test]
    fn large_loads_have_no_steady_state() {
        let grid = g();
        let p = Params::new(0.1, 2.5, 2.5).unwrap();
        let err = steady_newton(&p, &MembraneState::rest(grid.gx), &grid).unwrap_err();
        assert!(matches!(err, Error::NoSteadyState { .. }), "{err}");
    }
}
