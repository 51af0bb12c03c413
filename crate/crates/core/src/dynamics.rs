//! Time integration of the membrane equations: implicit diffusion, lagged
//! electrostatic load, touchdown detection.

use serde::{Deserialize, Serialize};

use crate::banded::Tridiagonal;
use crate::diagnostics::{lyapunov_e, LyapunovParams};
use crate::elliptic::{potential_and_loads, PotentialField, TraceLoad};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid1D, Grid2D};
use crate::params::{GapParams, Params};
use crate::state::{validate_state, MembraneState, StateClass};

/// Step size, horizon and recording stride.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeControls {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// Extra load re-evaluations per step at the provisional new state.
    #[serde(default)]
    pub inner_iterations: usize,
}

impl Default for TimeControls {
    fn default() -> Self {
        TimeControls {
            dt: 1e-4,
            t_end: 1.0,
            record_every: 100,
            inner_iterations: 0,
        }
    }
}

impl TimeControls {
    pub fn new(dt: f64, t_end: f64, record_every: usize) -> Result<Self> {
        let tc = TimeControls {
            dt,
            t_end,
            record_every,
            inner_iterations: 0,
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("{} must be positive", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", format!("{} must be positive", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    ReachedTEnd,
    Touchdown { t_star: f64 },
    Diverged { t: f64, reason: String },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::ReachedTEnd => "reached_t_end",
            Verdict::Touchdown { .. } => "touchdown",
            Verdict::Diverged { .. } => "diverged",
        }
    }

    pub fn touchdown_time(&self) -> Option<f64> {
        match self {
            Verdict::Touchdown { t_star } => Some(*t_star),
            _ => None,
        }
    }
}

/// Recorded time series of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub model: String,
    pub params: Params,
    pub snapshots: Vec<MembraneState>,
    pub gap_min: Vec<f64>,
    pub e_alpha: Vec<f64>,
    /// Max-norms of `(g₁, g₂)` at each recorded state (NaN if not evaluated).
    pub load_norms: Vec<(f64, f64)>,
    pub verdict: Verdict,
    pub steps: usize,
}

impl SimRecord {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &MembraneState {
        self.snapshots.last().expect("a record holds at least the initial state")
    }
}

/// Source of the membrane loads for a given state.
pub trait LoadModel: Sync {
    fn tag(&self) -> &'static str;
    fn loads(&self, s: &MembraneState) -> Result<TraceLoad>;
}

/// Loads from the full potential problem.
#[derive(Clone, Copy, Debug)]
pub struct FullLoads {
    pub params: Params,
    pub grid: Grid2D,
}

impl LoadModel for FullLoads {
    fn tag(&self) -> &'static str {
        "full"
    }

    fn loads(&self, s: &MembraneState) -> Result<TraceLoad> {
        Ok(potential_and_loads(s, &self.params, &self.grid)?.1)
    }
}

/// Implicit heat solve `(I - dt ∂²ₓ)` on the interior nodes.
#[derive(Clone, Debug)]
pub struct HeatSolver {
    grid: Grid1D,
    dt: f64,
    tri: Tridiagonal,
}

impl HeatSolver {
    pub fn new(grid: Grid1D, dt: f64) -> Self {
        let r = dt / (grid.h() * grid.h());
        HeatSolver {
            grid,
            dt,
            tri: Tridiagonal::new(grid.cells() - 1, -r, 1.0 + 2.0 * r, -r),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step for both membranes under the given loads.
    pub fn step(&self, s: &MembraneState, loads: &TraceLoad, lambda: f64, mu: f64) -> MembraneState {
        let n = self.grid.cells();
        let dt = self.dt;
        let mut u: Vec<f64> = (1..n).map(|i| s.u[i] - dt * lambda * loads.g1[i]).collect();
        let mut w: Vec<f64> = (1..n).map(|i| s.v[i] + 1.0 + dt * mu * loads.g2[i]).collect();
        self.tri.solve_in_place(&mut u);
        self.tri.solve_in_place(&mut w);
        let mut out = MembraneState::rest(self.grid);
        out.u[1..n].copy_from_slice(&u);
        for (dst, w) in out.v[1..n].iter_mut().zip(w) {
            *dst = w - 1.0;
        }
        out.pin();
        out.t = s.t + dt;
        out
    }
}

fn stepped<M: LoadModel>(
    model: &M,
    heat: &HeatSolver,
    s: &MembraneState,
    loads: &TraceLoad,
    lambda: f64,
    mu: f64,
    inner: usize,
) -> Result<MembraneState> {
    let mut next = heat.step(s, loads, lambda, mu);
    for _ in 0..inner {
        let implicit = model.loads(&next)?;
        next = heat.step(s, &implicit, lambda, mu);
    }
    Ok(next)
}

/// One IMEX step of the full model.
pub fn imex_step(s: &MembraneState, p: &Params, dt: f64, grid: &Grid2D) -> Result<MembraneState> {
    p.require_full_model()?;
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let model = FullLoads { params: *p, grid: *grid };
    let loads = model.loads(s)?;
    Ok(HeatSolver::new(s.grid, dt).step(s, &loads, p.lambda, p.mu))
}

/// Evolves the full model from `s0`.
pub fn run_evolution(
    s0: &MembraneState,
    p: &Params,
    tc: &TimeControls,
    gap: &GapParams,
    grid: &Grid2D,
) -> Result<SimRecord> {
    p.require_full_model()?;
    evolve(&FullLoads { params: *p, grid: *grid }, s0, p, tc, gap)
}

/// Generic evolution driver shared by the full and narrow-gap models.
pub fn evolve<M: LoadModel>(
    model: &M,
    s0: &MembraneState,
    p: &Params,
    tc: &TimeControls,
    gap: &GapParams,
) -> Result<SimRecord> {
    p.validate()?;
    tc.validate()?;
    gap.validate()?;
    s0.check_shape()?;
    let grid = s0.grid;
    let lyap = LyapunovParams::new(p.eps, p.lambda, grid);
    let heat = HeatSolver::new(grid, tc.dt);
    let t0 = s0.t;
    let span = tc.t_end - t0;
    if span <= 0.0 {
        return Err(invalid("t_end", "must exceed the initial time"));
    }
    let steps = (span / tc.dt - 1e-9).ceil().max(1.0) as usize;

    let mut rec = SimRecord {
        model: model.tag().to_string(),
        params: *p,
        snapshots: Vec::new(),
        gap_min: Vec::new(),
        e_alpha: Vec::new(),
        load_norms: Vec::new(),
        verdict: Verdict::ReachedTEnd,
        steps: 0,
    };
    let push = |rec: &mut SimRecord, s: &MembraneState, norms: (f64, f64)| {
        rec.gap_min.push(s.gap_min());
        rec.e_alpha.push(lyapunov_e(s, &lyap));
        rec.load_norms.push(norms);
        rec.snapshots.push(s.clone());
    };

    let mut s = s0.clone();
    match validate_state(&s, gap)? {
        StateClass::Admissible => {}
        StateClass::Touchdown => {
            rec.verdict = Verdict::Touchdown { t_star: s.t };
            push(&mut rec, &s, (f64::NAN, f64::NAN));
            return Ok(rec);
        }
        StateClass::BoundaryViolation => {
            return Err(invalid("initial state", "violates pinning or ordering constraints"));
        }
    }

    for k in 0..steps {
        let loads = match model.loads(&s) {
            Ok(l) => l,
            Err(e) => {
                push(&mut rec, &s, (f64::NAN, f64::NAN));
                rec.verdict = Verdict::Diverged { t: s.t, reason: e.to_string() };
                return Ok(rec);
            }
        };
        if k % tc.record_every == 0 {
            push(&mut rec, &s, loads.max_norms());
        }
        let last = k + 1 == steps;
        let dt = if last { tc.t_end - s.t } else { tc.dt };
        let step_heat;
        let heat_ref = if last && (dt - tc.dt).abs() > 1e-15 * tc.dt.max(1.0) {
            step_heat = HeatSolver::new(grid, dt);
            &step_heat
        } else {
            &heat
        };
        let mut next = match stepped(model, heat_ref, &s, &loads, p.lambda, p.mu, tc.inner_iterations) {
            Ok(n) => n,
            Err(e) => {
                rec.verdict = Verdict::Diverged { t: s.t, reason: e.to_string() };
                push_last(&mut rec, &s, &push);
                return Ok(rec);
            }
        };
        next.t = if last { tc.t_end } else { t0 + (k + 1) as f64 * tc.dt };
        rec.steps = k + 1;

        if !next.is_finite() {
            rec.verdict = Verdict::Diverged { t: next.t, reason: "non-finite displacement".into() };
            push_last(&mut rec, &s, &push);
            return Ok(rec);
        }
        let g_prev = s.gap_min();
        let g_next = next.gap_min();
        if g_next > 2.0 {
            rec.verdict = Verdict::Diverged { t: next.t, reason: format!("gap {g_next} exceeds 2") };
            push(&mut rec, &next, (f64::NAN, f64::NAN));
            return Ok(rec);
        }
        match validate_state(&next, gap)? {
            StateClass::Admissible => {}
            StateClass::Touchdown => {
                let frac = ((g_prev - gap.touchdown_gap) / (g_prev - g_next)).clamp(0.0, 1.0);
                let t_star = s.t + frac * (next.t - s.t);
                rec.verdict = Verdict::Touchdown { t_star };
                push_last(&mut rec, &s, &push);
                push(&mut rec, &next, (f64::NAN, f64::NAN));
                return Ok(rec);
            }
            StateClass::BoundaryViolation => {
                rec.verdict = Verdict::Diverged { t: next.t, reason: "boundary violation".into() };
                push_last(&mut rec, &s, &push);
                push(&mut rec, &next, (f64::NAN, f64::NAN));
                return Ok(rec);
            }
        }
        s = next;
    }
    let norms = model.loads(&s).map(|l| l.max_norms()).unwrap_or((f64::NAN, f64::NAN));
    push(&mut rec, &s, norms);
    Ok(rec)
}

/// Records `s` unless it is already the last snapshot.
fn push_last<F>(rec: &mut SimRecord, s: &MembraneState, push: &F)
where
    F: Fn(&mut SimRecord, &MembraneState, (f64, f64)),
{
    if rec.snapshots.last().map(|l| l.t) != Some(s.t) {
        push(rec, s, (f64::NAN, f64::NAN));
    }
}

/// The symmetry `U = -v - 1`, `V = -u - 1`, `φ̃'(x, z') = 1 - φ̃(x, 1 - z')`.
pub fn swap_transform(s: &MembraneState, phi: &PotentialField) -> Result<(MembraneState, PotentialField)> {
    s.check_shape()?;
    if phi.grid.gx != s.grid {
        return Err(Error::Structure("potential and state grids differ".into()));
    }
    let g = phi.grid;
    let nz = g.nz();
    let mut psi = vec![0.0; g.len()];
    let mut phi_tilde = vec![0.0; g.len()];
    for i in 0..g.gx.len() {
        for j in 0..=nz {
            let src = g.index(i, nz - j);
            let dst = g.index(i, j);
            psi[dst] = -phi.psi[src];
            phi_tilde[dst] = 1.0 - phi.phi_tilde[src];
        }
    }
    Ok((s.swapped(), PotentialField { grid: g, psi, phi_tilde }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::solve_potential;
    use std::f64::consts::PI;

    fn grid2() -> Grid2D {
        Grid2D::new(20, 8).unwrap()
    }

    #[test]
    fn unloaded_rest_state_is_fixed() {
        let g = grid2();
        let s = MembraneState::rest(g.gx);
        let next = imex_step(&s, &Params::new(0.1, 0.0, 0.0).unwrap(), 1e-3, &g).unwrap();
        assert!(s.distance(&next) < 1e-14);
    }

    #[test]
    fn heat_eigenmode_decays_by_backward_euler_factor() {
        let g = Grid2D::new(100, 8).unwrap();
        let s = MembraneState::from_fns(g.gx, |x| -0.1 * (PI * (x + 1.0) / 2.0).sin(), |_| -1.0);
        let dt = 1e-2;
        let next = imex_step(&s, &Params::new(0.1, 0.0, 0.0).unwrap(), dt, &g).unwrap();
        let factor = next.u[50] / s.u[50];
        let want = 1.0 / (1.0 + dt * PI * PI / 4.0);
        assert!((factor - want).abs() < 1e-4, "{factor} vs {want}");
    }

    #[test]
    fn load_pulls_membranes_together() {
        let g = grid2();
        let s = MembraneState::rest(g.gx);
        let next = imex_step(&s, &Params::new(0.1, 1.0, 1.0).unwrap(), 1e-2, &g).unwrap();
        assert!(next.u.iter().all(|&u| u <= 0.0));
        assert!(next.u.iter().any(|&u| u < 0.0));
        assert!(next.v.iter().all(|&v| v >= -1.0));
        assert!(next.v[10] > -1.0);
    }

    #[test]
    fn small_loads_reach_the_horizon() {
        let g = grid2();
        let p = Params::new(0.1, 0.1, 0.1).unwrap();
        let tc = TimeControls::new(0.05, 1.0, 5).unwrap();
        let rec = run_evolution(&MembraneState::rest(g.gx), &p, &tc, &GapParams::default(), &g).unwrap();
        assert_eq!(rec.verdict, Verdict::ReachedTEnd);
        assert_eq!(rec.last().t, 1.0);
        let times = rec.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(rec.gap_min.iter().all(|&g| g > 0.5));
    }

    #[test]
    fn last_step_is_shortened() {
        let g = grid2();
        let p = Params::new(0.1, 0.0, 0.0).unwrap();
        let tc = TimeControls::new(0.3, 1.0, 1).unwrap();
        let rec = run_evolution(&MembraneState::rest(g.gx), &p, &tc, &GapParams::default(), &g).unwrap();
        assert_eq!(rec.steps, 4);
        let times = rec.times();
        assert_eq!(times.len(), 5);
        assert_eq!(times[4], 1.0);
        assert!((times[3] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn strong_loads_touch_down() {
        let g = grid2();
        let p = Params::new(0.1, 20.0, 20.0).unwrap();
        let tc = TimeControls::new(1e-3, 1.0, 10).unwrap();
        let rec = run_evolution(&MembraneState::rest(g.gx), &p, &tc, &GapParams::default(), &g).unwrap();
        let t_star = rec.verdict.touchdown_time().expect("touchdown");
        assert!(t_star > 0.0 && t_star < 1.0);
        let n = rec.gap_min.len();
        assert!(rec.gap_min[n - 2] >= 1e-3 && rec.gap_min[n - 1] < 1e-3);
    }

    #[test]
    fn swap_is_an_involution() {
        let g = grid2();
        let s = MembraneState::from_fns(g.gx, |x| -0.2 * (1.0 - x * x), |x| -1.0 + 0.1 * (1.0 - x * x) * (1.0 + x));
        let phi = solve_potential(&s, &Params::new(0.3, 0.0, 0.0).unwrap(), &g).unwrap();
        let (s1, phi1) = swap_transform(&s, &phi).unwrap();
        let (s2, phi2) = swap_transform(&s1, &phi1).unwrap();
        assert!(s.distance(&s2) < 1e-14);
        for k in 0..g.len() {
            assert!((phi.phi_tilde[k] - phi2.phi_tilde[k]).abs() < 1e-14);
        }
        let rest = MembraneState::rest(g.gx);
        let (r, _) = swap_transform(&rest, &PotentialField::affine(g)).unwrap();
        assert_eq!(r, rest);
    }

    #[test]
    fn swapped_potential_solves_swapped_problem() {
        let g = grid2();
        let p = Params::new(0.3, 0.0, 0.0).unwrap();
        let s = MembraneState::from_fns(g.gx, |x| -0.2 * (1.0 - x * x), |x| -1.0 + 0.1 * (1.0 - x * x) * (1.0 + x));
        let phi = solve_potential(&s, &p, &g).unwrap();
        let (s1, phi1) = swap_transform(&s, &phi).unwrap();
        let direct = solve_potential(&s1, &p, &g).unwrap();
        for k in 0..g.len() {
            assert!((direct.phi_tilde[k] - phi1.phi_tilde[k]).abs() < 1e-12);
        }
    }
}
