//! Damped Newton and natural / pseudo-arclength continuation for problems
//! `R(t, x) = 0` with a scalar parameter `t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::banded::BandLu;
use crate::error::{invalid, Error, Result};

/// A factored linear operator.
pub trait LinearSolve: Send + Sync {
    fn solve(&self, b: &[f64]) -> Vec<f64>;
}

impl LinearSolve for BandLu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        BandLu::solve(self, b)
    }
}

/// Dense LU factors.
pub struct DenseLu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);

impl DenseLu {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::LinearSolve {
                reason: "singular Jacobian".into(),
                residual: f64::NAN,
            });
        }
        Ok(DenseLu(lu))
    }
}

impl LinearSolve for DenseLu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = nalgebra::DVector::from_column_slice(b);
        match self.0.solve(&rhs) {
            Some(x) => x.as_slice().to_vec(),
            None => vec![f64::NAN; b.len()],
        }
    }
}

/// Residual, factored Jacobian and parameter derivative at one point.
pub struct Linearization {
    pub residual: Vec<f64>,
    pub d_param: Vec<f64>,
    pub solver: Box<dyn LinearSolve>,
}

/// A parameter-dependent nonlinear system.
pub trait ContinuationProblem {
    fn dim(&self) -> usize;
    fn residual(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
    fn linearize(&self, t: f64, x: &[f64]) -> Result<Linearization>;
    /// Whether `x` lies in the admissible set.
    fn admissible(&self, x: &[f64]) -> bool;
    /// Weight of the state part of the arclength metric.
    fn weight(&self) -> f64;
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Result of a converged Newton solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Number of Newton updates applied.
    pub iterations: usize,
    /// Max-norm residual before each update and after the last one.
    pub history: Vec<f64>,
}

/// Damped Newton iteration at fixed `t` with step halving.
pub fn newton<P: ContinuationProblem + ?Sized>(
    problem: &P,
    t: f64,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let mut x = x0.to_vec();
    let mut history = Vec::new();
    let fail = |iterations, residual| Error::NoSteadyState { iterations, residual };
    if !problem.admissible(&x) {
        return Err(fail(0, f64::NAN));
    }
    for iter in 0..=max_iter {
        let lin = match problem.linearize(t, &x) {
            Ok(l) => l,
            Err(_) => return Err(fail(iter, history.last().copied().unwrap_or(f64::NAN))),
        };
        let r = max_norm(&lin.residual);
        history.push(r);
        if !r.is_finite() {
            return Err(fail(iter, r));
        }
        if r <= tol {
            return Ok(NewtonOutcome { x, iterations: iter, history });
        }
        if iter == max_iter {
            return Err(fail(iter, r));
        }
        let dx = lin.solver.solve(&lin.residual);
        if dx.iter().any(|d| !d.is_finite()) {
            return Err(fail(iter, r));
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - alpha * d).collect();
            if problem.admissible(&trial) {
                if let Ok(rt) = problem.residual(t, &trial) {
                    let rn = max_norm(&rt);
                    if rn.is_finite() && (rn < r || rn <= tol) {
                        accepted = Some(trial);
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => x = next,
            None => return Err(fail(iter, r)),
        }
    }
    unreachable!("loop returns on the last iteration")
}

/// Step-size and stopping controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationControls {
    /// Natural-parameter step.
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub tol: f64,
    pub max_newton: usize,
    pub max_points: usize,
    /// Points kept after the first fold before stopping.
    pub after_fold: usize,
    /// Upper bound on the parameter.
    pub t_max: f64,
}

impl Default for ContinuationControls {
    fn default() -> Self {
        ContinuationControls {
            step: 0.01,
            min_step: 1e-6,
            max_step: 0.02,
            tol: 1e-9,
            max_newton: 25,
            max_points: 2000,
            after_fold: 3,
            t_max: f64::INFINITY,
        }
    }
}

impl ContinuationControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.min_step > 0.0 && self.max_step >= self.min_step) {
            return Err(invalid("step", "continuation steps must be positive and ordered"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        Ok(())
    }
}

/// One converged point of a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub newton_iters: usize,
    pub residual: f64,
    /// Cumulative weighted arclength.
    pub arclength: f64,
    pub fold: bool,
}

/// A traced solution path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationPath {
    pub points: Vec<PathPoint>,
    /// Parabolic estimate of the parameter at the first fold.
    pub fold_value: Option<f64>,
    pub termination: String,
}

fn weighted_dist<P: ContinuationProblem + ?Sized>(p: &P, a: &PathPoint, b: &PathPoint) -> f64 {
    let th = p.weight();
    let dx2: f64 = a.x.iter().zip(&b.x).map(|(u, v)| (u - v).powi(2)).sum();
    (th * dx2 + (a.t - b.t).powi(2)).sqrt()
}

/// Corrector of the pseudo-arclength system.
fn arclength_correct<P: ContinuationProblem + ?Sized>(
    problem: &P,
    prev: &PathPoint,
    tangent: (&[f64], f64),
    ds: f64,
    c: &ContinuationControls,
) -> Option<(f64, Vec<f64>, usize, f64)> {
    let th = problem.weight();
    let (tx, tt) = tangent;
    let mut x: Vec<f64> = prev.x.iter().zip(tx).map(|(a, d)| a + ds * d).collect();
    let mut t = prev.t + ds * tt;
    for iter in 0..=c.max_newton {
        if !problem.admissible(&x) {
            return None;
        }
        let lin = problem.linearize(t, &x).ok()?;
        let n_res = th * tx.iter().zip(x.iter().zip(&prev.x)).map(|(d, (a, b))| d * (a - b)).sum::<f64>()
            + tt * (t - prev.t)
            - ds;
        let r = max_norm(&lin.residual);
        if !r.is_finite() {
            return None;
        }
        if r <= c.tol && n_res.abs() <= c.tol {
            return Some((t, x, iter, r));
        }
        if iter == c.max_newton {
            return None;
        }
        let y1 = lin.solver.solve(&lin.residual);
        let y2 = lin.solver.solve(&lin.d_param);
        let dot = |v: &[f64]| th * tx.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let denom = tt - dot(&y2);
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        let dt = (dot(&y1) - n_res) / denom;
        for ((xi, a), b) in x.iter_mut().zip(&y1).zip(&y2) {
            *xi += -a - dt * b;
        }
        t += dt;
    }
    None
}

/// Vertex of the parabola through three `(s, t)` samples.
pub fn parabola_vertex(s: [f64; 3], t: [f64; 3]) -> f64 {
    let d01 = (t[1] - t[0]) / (s[1] - s[0]);
    let d12 = (t[2] - t[1]) / (s[2] - s[1]);
    let a = (d12 - d01) / (s[2] - s[0]);
    if a == 0.0 || !a.is_finite() {
        return t[1];
    }
    let b = d01 - a * (s[0] + s[1]);
    let sv = -b / (2.0 * a);
    let c0 = t[0] - a * s[0] * s[0] - b * s[0];
    a * sv * sv + b * sv + c0
}

/// Traces the solution path from a converged point `(t0, x0)`.
///
/// Natural steps in `t` are used until Newton fails; the path then switches
/// to pseudo-arclength with a secant predictor and an adaptive step.
pub fn trace<P: ContinuationProblem + ?Sized>(
    problem: &P,
    t0: f64,
    x0: &[f64],
    c: &ContinuationControls,
) -> Result<ContinuationPath> {
    c.validate()?;
    let start = newton(problem, t0, x0, c.tol, c.max_newton)?;
    let mut points = vec![PathPoint {
        t: t0,
        residual: *start.history.last().unwrap_or(&0.0),
        x: start.x,
        newton_iters: start.iterations,
        arclength: 0.0,
        fold: false,
    }];
    let mut step = c.step;
    let mut arclength = false;
    let mut ds = c.step;
    let mut fold_at: Option<usize> = None;
    let mut termination = String::from("max_points");

    while points.len() < c.max_points {
        let last = points.last().unwrap().clone();
        if let Some(k) = fold_at {
            if points.len() > k + c.after_fold {
                termination = "past_fold".into();
                break;
            }
        }
        if last.t > c.t_max {
            termination = "t_max".into();
            break;
        }
        if last.t < 0.0 {
            termination = "negative_parameter".into();
            break;
        }
        let next = if !arclength {
            let t = last.t + step;
            match newton(problem, t, &last.x, c.tol, c.max_newton) {
                Ok(out) => Some(PathPoint {
                    t,
                    residual: *out.history.last().unwrap(),
                    x: out.x,
                    newton_iters: out.iterations,
                    arclength: 0.0,
                    fold: false,
                }),
                Err(_) if points.len() >= 2 => {
                    arclength = true;
                    let prev = &points[points.len() - 2];
                    ds = weighted_dist(problem, prev, &last).min(c.max_step);
                    continue;
                }
                Err(_) => {
                    step *= 0.5;
                    if step < c.min_step {
                        termination = "step_underflow".into();
                        break;
                    }
                    continue;
                }
            }
        } else {
            let prev = &points[points.len() - 2];
            let len = weighted_dist(problem, prev, &last);
            let tx: Vec<f64> = last.x.iter().zip(&prev.x).map(|(a, b)| (a - b) / len).collect();
            let tt = (last.t - prev.t) / len;
            match arclength_correct(problem, &last, (&tx, tt), ds, c) {
                Some((t, x, iters, r)) => {
                    if iters <= 3 {
                        ds = (ds * 1.3).min(c.max_step);
                    }
                    Some(PathPoint {
                        t,
                        x,
                        newton_iters: iters,
                        residual: r,
                        arclength: 0.0,
                        fold: false,
                    })
                }
                None => {
                    ds *= 0.5;
                    if ds < c.min_step {
                        termination = "step_underflow".into();
                        break;
                    }
                    continue;
                }
            }
        };
        let mut p = next.expect("handled above");
        p.arclength = last.arclength + weighted_dist(problem, &last, &p);
        points.push(p);
        let n = points.len();
        if fold_at.is_none() && n >= 3 {
            let d1 = points[n - 2].t - points[n - 3].t;
            let d2 = points[n - 1].t - points[n - 2].t;
            if d1 > 0.0 && d2 < 0.0 {
                fold_at = Some(n - 2);
                points[n - 2].fold = true;
            }
        }
    }
    let fold_value = fold_at.map(|k| {
        let s = [points[k - 1].arclength, points[k].arclength, points[k + 1].arclength];
        let t = [points[k - 1].t, points[k].t, points[k + 1].t];
        parabola_vertex(s, t)
    });
    Ok(ContinuationPath {
        points,
        fold_value,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x² + t - 1 = 0` componentwise: fold at `t = 1`, `x = 0`.
    struct Quadratic;

    impl ContinuationProblem for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn residual(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().map(|v| v * v + t - 1.0).collect())
        }
        fn linearize(&self, t: f64, x: &[f64]) -> Result<Linearization> {
            let m = DMatrix::from_fn(2, 2, |i, j| if i == j { 2.0 * x[i] } else { 0.0 });
            Ok(Linearization {
                residual: self.residual(t, x)?,
                d_param: vec![1.0; 2],
                solver: Box::new(DenseLu::new(m)?),
            })
        }
        fn admissible(&self, x: &[f64]) -> bool {
            x.iter().all(|v| v.abs() < 10.0)
        }
        fn weight(&self) -> f64 {
            0.5
        }
    }

    #[test]
    fn newton_converges_quadratically() {
        let out = newton(&Quadratic, 0.0, &[2.0, 2.0], 1e-12, 50).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-12);
        let h = &out.history;
        let n = h.len();
        assert!(h[n - 1] <= 10.0 * h[n - 2] * h[n - 2]);
    }

    #[test]
    fn newton_reports_missing_root() {
        let err = newton(&Quadratic, 2.0, &[1.0, 1.0], 1e-12, 50).unwrap_err();
        assert!(matches!(err, Error::NoSteadyState { .. }));
    }

    #[test]
    fn fold_of_quadratic_is_located() {
        let c = ContinuationControls {
            step: 0.05,
            max_step: 0.05,
            tol: 1e-12,
            ..Default::default()
        };
        let path = trace(&Quadratic, 0.0, &[1.0, 1.0], &c).unwrap();
        let fold = path.fold_value.expect("fold");
        assert!((fold - 1.0).abs() < 1e-3, "{fold}");
        assert_eq!(path.termination, "past_fold");
        assert_eq!(path.points.iter().filter(|p| p.fold).count(), 1);
        assert!(path.points.last().unwrap().x[0] < 0.0);
    }

    #[test]
    fn vertex_of_exact_parabola() {
        let f = |s: f64| 2.0 - 3.0 * (s - 0.4).powi(2);
        let s = [0.1, 0.35, 0.9];
        assert!((parabola_vertex(s, s.map(f)) - 2.0).abs() < 1e-13);
    }
}
