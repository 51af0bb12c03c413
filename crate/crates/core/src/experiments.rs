//! Experiment drivers behind the command-line modes. Each driver writes its
//! artifacts into the configured output directory and a `manifest.json`.

use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentConfig, InitShape, Model};
use crate::corpus::corpus;
use crate::diagnostics::{
    chain_rule_check, max_principle_check, symmetry_checks, CheckReport, EVENNESS_TOLERANCE,
};
use crate::dynamics::{run_evolution, SimRecord, TimeControls};
use crate::elliptic::{assemble_operator, solve_potential, Edge, PotentialField};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_slice, Execution};
use crate::grid::{Grid1D, Grid2D};
use crate::mms::{mms_study, MmsRow};
use crate::output::{sci, sci_opt, steady_branch_rows, write_branch, write_record, write_state, BranchRow, OutputDir};
use crate::params::{GapParams, Params};
use crate::sar::{run_sar_evolution, sar_branch, sar_newton, SarProblem};
use crate::state::{max_abs_diff, MembraneState};
use crate::steady::{
    m2_threshold, spectral_bound, steady_newton_with, trace_branch, xi0, BranchControls, NewtonControls,
};
use crate::transform::{rasterize_with, write_raster_csv, PhysicalGrid};

/// Command-line modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Evolve,
    Sar,
    Steady,
    Branch,
    Sweep,
    Thresholds,
    Verify,
    Convergence,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Evolve => "evolve",
            Mode::Sar => "sar",
            Mode::Steady => "steady",
            Mode::Branch => "branch",
            Mode::Sweep => "sweep",
            Mode::Thresholds => "thresholds",
            Mode::Verify => "verify",
            Mode::Convergence => "convergence",
        }
    }
}

/// What a run produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub files: Vec<String>,
    /// False only when `verify` has a failing regular check.
    pub success: bool,
    pub message: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    mode: Mode,
    version: &'static str,
    grid: GridEcho,
    wall_time_s: f64,
    files: &'a [String],
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct GridEcho {
    nx: usize,
    nz: usize,
}

/// Runs one mode and writes its artifacts plus `manifest.json`.
pub fn run(mode: Mode, cfg: &ExperimentConfig, exec: Execution) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = OutputDir::create(&cfg.output.dir)?;
    let (success, message) = match mode {
        Mode::Evolve => evolve_driver(cfg, cfg.params.model, exec, &mut out)?,
        Mode::Sar => evolve_driver(cfg, Model::Sar, exec, &mut out)?,
        Mode::Steady => steady_driver(cfg, exec, &mut out)?,
        Mode::Branch => branch_driver(cfg, exec, &mut out)?,
        Mode::Sweep => sweep_driver(cfg, exec, &mut out)?,
        Mode::Thresholds => thresholds_driver(cfg, &mut out)?,
        Mode::Verify => verify_driver(cfg, exec, &mut out)?,
        Mode::Convergence => convergence_driver(cfg, exec, &mut out)?,
    };
    let files = out.files().to_vec();
    out.json(
        "manifest.json",
        &Manifest {
            mode,
            version: env!("CARGO_PKG_VERSION"),
            grid: GridEcho {
                nx: cfg.grid.nx,
                nz: cfg.grid.nz,
            },
            wall_time_s: start.elapsed().as_secs_f64(),
            files: &files,
            config: cfg,
        },
    )?;
    Ok(RunReport {
        mode,
        files: out.files().to_vec(),
        success,
        message,
    })
}

/// Initial membranes described by `[params] init` and `init_amplitude`.
pub fn initial_state(shape: InitShape, amplitude: f64, grid: Grid1D) -> MembraneState {
    let a = amplitude;
    match shape {
        InitShape::Rest => MembraneState::rest(grid),
        InitShape::Bump => MembraneState::from_fns(grid, |x| -a * (1.0 - x * x), |x| -1.0 + 0.5 * a * (1.0 - x * x)),
        InitShape::Tilted => MembraneState::from_fns(
            grid,
            |x| -a * (1.0 - x * x) * (1.0 + 0.5 * x),
            |x| -1.0 + 0.5 * a * (1.0 - x * x) * (1.0 - 0.3 * x),
        ),
    }
}

fn config_state(cfg: &ExperimentConfig, grid: Grid1D) -> MembraneState {
    initial_state(cfg.params.init, cfg.params.init_amplitude, grid)
}

fn evolve_model(
    model: Model,
    s0: &MembraneState,
    p: &Params,
    tc: &TimeControls,
    gap: &GapParams,
    grid: &Grid2D,
) -> Result<SimRecord> {
    match model {
        Model::Full => run_evolution(s0, p, tc, gap, grid),
        Model::Sar => run_sar_evolution(s0, p, tc, gap),
    }
}

fn evolve_driver(cfg: &ExperimentConfig, model: Model, exec: Execution, out: &mut OutputDir) -> Result<(bool, String)> {
    let grid = cfg.grid2d()?;
    let p = cfg.params();
    let s0 = config_state(cfg, grid.gx);
    if cfg.output.dump_matrix && model == Model::Full {
        let asm = assemble_operator(&s0, &p, &grid)?;
        out.with_writer("operator.coo", |w| asm.write_coo(w))?;
    }
    let rec = evolve_model(model, &s0, &p, &cfg.time_controls()?, &cfg.gap_params()?, &grid)?;
    write_record(out, &rec, cfg.output.snapshots)?;
    if cfg.output.raster {
        let last = rec.last();
        let phi = match model {
            Model::Full => solve_potential(last, &p, &grid)?,
            Model::Sar => PotentialField::affine(grid),
        };
        let raster = rasterize_with(&phi, last, &PhysicalGrid::new(grid.gx, cfg.grid.raster_nz)?, exec);
        out.with_writer("raster.csv", |w| write_raster_csv(&raster, w))?;
    }
    Ok((true, format!("{} run: {}", rec.model, rec.verdict.label())))
}

fn sar_spectral_bound(problem: &SarProblem, t: f64, x: &[f64]) -> Result<f64> {
    spectral_bound(&problem.jacobian(t, x).to_dense())
}

#[derive(Serialize)]
struct SteadySummary {
    model: Model,
    lambda: f64,
    mu: f64,
    eps: f64,
    spectral_bound: f64,
    newton_iters: usize,
    residual_history: Vec<f64>,
    min_gap: f64,
}

fn steady_driver(cfg: &ExperimentConfig, exec: Execution, out: &mut OutputDir) -> Result<(bool, String)> {
    let grid = cfg.grid2d()?;
    let p = cfg.params();
    let init = config_state(cfg, grid.gx);
    let summary = match cfg.params.model {
        Model::Full => {
            let controls = NewtonControls {
                tol: cfg.newton.tol,
                max_iter: cfg.newton.max_iter,
                exec,
            };
            let (bp, outcome) = steady_newton_with(&p, &init, &grid, &controls)?;
            write_state(out, "steady_state.csv", &bp.state)?;
            SteadySummary {
                model: Model::Full,
                lambda: p.lambda,
                mu: p.mu,
                eps: p.eps,
                spectral_bound: bp.spectral_bound,
                newton_iters: bp.newton_iters,
                residual_history: outcome.history,
                min_gap: bp.state.gap_min(),
            }
        }
        Model::Sar => {
            let sol = sar_newton(&p, &init, cfg.newton.pinned_lower)?;
            let problem = SarProblem {
                grid: grid.gx,
                direction: (p.lambda, p.mu),
                pinned_lower: cfg.newton.pinned_lower,
            };
            let bound = sar_spectral_bound(&problem, 1.0, &problem.unknowns(&sol.state))?;
            write_state(out, "steady_state.csv", &sol.state)?;
            SteadySummary {
                model: Model::Sar,
                lambda: p.lambda,
                mu: p.mu,
                eps: 0.0,
                spectral_bound: bound,
                newton_iters: sol.iterations,
                residual_history: sol.history,
                min_gap: sol.state.gap_min(),
            }
        }
    };
    let msg = format!("steady state after {} Newton updates", summary.newton_iters);
    out.json("steady.json", &summary)?;
    Ok((true, msg))
}

#[derive(Serialize)]
struct BranchSummary {
    model: Model,
    eps: f64,
    ratio: f64,
    pinned_lower: bool,
    points: usize,
    fold_lambda: Option<f64>,
    spectral_crossing: Option<usize>,
    termination: String,
}

fn branch_driver(cfg: &ExperimentConfig, exec: Execution, out: &mut OutputDir) -> Result<(bool, String)> {
    let grid = cfg.grid2d()?;
    let ratio = cfg.params.ratio;
    let pinned = cfg.newton.pinned_lower;
    let summary = match cfg.params.model {
        Model::Full => {
            let controls = BranchControls {
                continuation: cfg.continuation(),
                pinned_lower: pinned,
                spectrum: cfg.newton.spectrum,
                exec,
            };
            let b = trace_branch(ratio, &cfg.params(), &grid, &controls)?;
            write_branch(out, &steady_branch_rows(&b))?;
            BranchSummary {
                model: Model::Full,
                eps: cfg.params.eps,
                ratio,
                pinned_lower: pinned,
                points: b.points.len(),
                fold_lambda: b.fold_lambda,
                spectral_crossing: b.spectral_crossing,
                termination: b.termination,
            }
        }
        Model::Sar => {
            let direction = (1.0, if pinned { 0.0 } else { ratio });
            let path = sar_branch(grid.gx, direction, pinned, &cfg.continuation())?;
            let problem = SarProblem {
                grid: grid.gx,
                direction,
                pinned_lower: pinned,
            };
            let bounds: Vec<f64> = if cfg.newton.spectrum {
                map_slice(exec, &path.points, |pt| sar_spectral_bound(&problem, pt.t, &pt.x))
                    .into_iter()
                    .collect::<Result<_>>()?
            } else {
                vec![f64::NAN; path.points.len()]
            };
            let rows: Vec<BranchRow> = path
                .points
                .iter()
                .zip(&bounds)
                .map(|(pt, &sb)| {
                    BranchRow::from_state(pt.t * direction.0, pt.t * direction.1, &problem.state(&pt.x), sb, pt.fold)
                })
                .collect();
            write_branch(out, &rows)?;
            BranchSummary {
                model: Model::Sar,
                eps: 0.0,
                ratio,
                pinned_lower: pinned,
                points: rows.len(),
                fold_lambda: path.fold_value,
                spectral_crossing: bounds.windows(2).position(|w| w[0] < 0.0 && w[1] >= 0.0),
                termination: path.termination,
            }
        }
    };
    let msg = match summary.fold_lambda {
        Some(f) => format!("fold at lambda = {f:.10}"),
        None => format!("no fold ({})", summary.termination),
    };
    out.json("branch.json", &summary)?;
    Ok((true, msg))
}

/// One row of a λ sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mu: f64,
    pub verdict: String,
    pub touchdown_time: Option<f64>,
    pub final_gap_min: f64,
    pub steady_converged: bool,
    pub steady_iters: Option<usize>,
    pub steady_spectral_bound: Option<f64>,
}

/// Evolution verdict and a cold-start steady solve at each `λ`, `μ = ratio·λ`.
pub fn sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SweepRow>> {
    let grid = cfg.grid2d()?;
    let tc = cfg.time_controls()?;
    let gap = cfg.gap_params()?;
    let model = cfg.params.model;
    let s0 = config_state(cfg, grid.gx);
    let rest = MembraneState::rest(grid.gx);
    let newton = NewtonControls {
        tol: cfg.newton.tol,
        max_iter: cfg.newton.max_iter,
        exec: Execution::Sequential,
    };
    let rows = map_slice(exec, &cfg.params.lambda_values, |&lambda| -> Result<SweepRow> {
        let p = Params::new(cfg.params.eps, lambda, cfg.params.ratio * lambda)?;
        let rec = evolve_model(model, &s0, &p, &tc, &gap, &grid)?;
        let steady = match model {
            Model::Full => steady_newton_with(&p, &rest, &grid, &newton).map(|(bp, _)| (bp.newton_iters, bp.spectral_bound)),
            Model::Sar => sar_newton(&p, &rest, false).and_then(|sol| {
                let problem = SarProblem {
                    grid: grid.gx,
                    direction: (p.lambda, p.mu),
                    pinned_lower: false,
                };
                Ok((sol.iterations, sar_spectral_bound(&problem, 1.0, &problem.unknowns(&sol.state))?))
            }),
        };
        Ok(SweepRow {
            lambda,
            mu: p.mu,
            verdict: rec.verdict.label().to_string(),
            touchdown_time: rec.verdict.touchdown_time(),
            final_gap_min: rec.last().gap_min(),
            steady_converged: steady.is_ok(),
            steady_iters: steady.as_ref().ok().map(|s| s.0),
            steady_spectral_bound: steady.as_ref().ok().map(|s| s.1),
        })
    });
    rows.into_iter().collect()
}

fn sweep_driver(cfg: &ExperimentConfig, exec: Execution, out: &mut OutputDir) -> Result<(bool, String)> {
    let rows = sweep(cfg, exec)?;
    let body = rows.iter().map(|r| {
        [
            sci(r.lambda),
            sci(r.mu),
            r.verdict.clone(),
            sci_opt(r.touchdown_time),
            sci(r.final_gap_min),
            (r.steady_converged as u8).to_string(),
            r.steady_iters.map(|k| k.to_string()).unwrap_or_default(),
            sci_opt(r.steady_spectral_bound),
        ]
    });
    out.csv(
        "sweep.csv",
        &[
            "lambda",
            "mu",
            "verdict",
            "touchdown_time",
            "final_gap_min",
            "steady_converged",
            "steady_iters",
            "steady_spectral_bound",
        ],
        body,
    )?;
    let touchdowns = rows.iter().filter(|r| r.verdict == "touchdown").count();
    Ok((true, format!("{} points, {touchdowns} touchdowns", rows.len())))
}

/// Threshold values at one aspect ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub eps: f64,
    pub m2: f64,
    /// `None` at `ε = 0`, where the root is not defined.
    pub xi0: Option<f64>,
}

pub fn thresholds(eps_values: &[f64]) -> Result<Vec<ThresholdRow>> {
    eps_values
        .iter()
        .map(|&eps| {
            Ok(ThresholdRow {
                eps,
                m2: m2_threshold(eps),
                xi0: if eps > 0.0 { Some(xi0(eps)?) } else { None },
            })
        })
        .collect()
}

fn thresholds_driver(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(bool, String)> {
    let rows = thresholds(&cfg.params.eps_values)?;
    out.json("thresholds.json", &rows)?;
    Ok((true, format!("{} aspect ratios", rows.len())))
}

fn prefixed(prefix: &str, mut r: CheckReport) -> CheckReport {
    r.name = format!("{prefix}:{}", r.name);
    r
}

/// Maximum-principle and chain-rule checks over the corpus, checks along a
/// short evolution, and negative controls that must fail.
pub fn verify_checks(grid: &Grid2D, exec: Execution) -> Result<Vec<CheckReport>> {
    let entries = corpus(grid.gx);
    let per_entry = map_slice(exec, &entries, |e| -> Result<Vec<CheckReport>> {
        let p = Params::new(e.eps, 0.0, 0.0)?;
        let phi = solve_potential(&e.state, &p, grid)?;
        Ok(vec![
            prefixed(&e.name, max_principle_check(&phi)),
            prefixed(&e.name, chain_rule_check(&e.state, &phi, Edge::Upper)),
            prefixed(&e.name, chain_rule_check(&e.state, &phi, Edge::Lower)),
        ])
    });
    let mut reports = Vec::new();
    for r in per_entry {
        reports.extend(r?);
    }

    let p = Params::new(0.1, 0.1, 0.1)?;
    let tc = TimeControls::new(1e-3, 0.05, 10)?;
    let s0 = initial_state(InitShape::Bump, 0.2, grid.gx);
    let rec = run_evolution(&s0, &p, &tc, &GapParams::default(), grid)?;
    let snaps = map_slice(exec, &rec.snapshots, |s| solve_potential(s, &p, grid).map(|phi| max_principle_check(&phi)));
    for (k, r) in snaps.into_iter().enumerate() {
        reports.push(prefixed(&format!("evolution[{k}]"), r?));
    }
    reports.extend(symmetry_checks(&rec, None).into_iter().map(|r| prefixed("evolution", r)));

    let rest = MembraneState::rest(grid.gx);
    let mut shifted = solve_potential(&rest, &p, grid)?;
    shifted.phi_tilde.iter_mut().for_each(|v| *v += 1e-3);
    reports.push(prefixed("negative", max_principle_check(&shifted)).as_negative_control());
    let tilted = initial_state(InitShape::Tilted, 0.3, grid.gx);
    reports.push(
        CheckReport::bound(
            "negative:evenness_tilted",
            tilted.evenness_residual(),
            EVENNESS_TOLERANCE,
            None,
        )
        .as_negative_control(),
    );
    Ok(reports)
}

fn verify_driver(cfg: &ExperimentConfig, exec: Execution, out: &mut OutputDir) -> Result<(bool, String)> {
    let reports = verify_checks(&cfg.grid2d()?, exec)?;
    out.json("checks.json", &reports)?;
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.negative_control && !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    let unexpected = reports.iter().filter(|r| r.negative_control && r.passed).count();
    let mut msg = format!("{} checks, {} failed", reports.len(), failed.len());
    if !failed.is_empty() {
        msg.push_str(&format!(": {}", failed.join(", ")));
    }
    if unexpected > 0 {
        msg.push_str(&format!("; {unexpected} negative controls passed unexpectedly"));
    }
    Ok((failed.is_empty(), msg))
}

/// Horizontal resolutions of the manufactured-solution table.
pub const MMS_LEVELS: [usize; 3] = [50, 100, 200];

/// One `ε` row of the full-versus-narrow-gap comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Sup over recorded times of `‖u - u*‖∞ + ‖v - v*‖∞`.
    pub discrepancy: f64,
    /// Previous row's discrepancy over this one.
    pub ratio: Option<f64>,
    pub verdict: String,
    pub compared_snapshots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub sar_verdict: String,
    /// `None` for a single-entry list.
    pub strictly_decreasing: Option<bool>,
    pub mms_eps: f64,
    pub mms: Vec<MmsRow>,
}

fn discrepancy(full: &SimRecord, sar: &SimRecord) -> Result<(f64, usize)> {
    let n = full.snapshots.len().min(sar.snapshots.len());
    let mut worst = 0.0_f64;
    for (a, b) in full.snapshots.iter().zip(&sar.snapshots).take(n) {
        if (a.t - b.t).abs() > 1e-9 * a.t.abs().max(1.0) {
            return Err(Error::Structure(format!("recorded times differ: {} vs {}", a.t, b.t)));
        }
        worst = worst.max(max_abs_diff(&a.u, &b.u) + max_abs_diff(&a.v, &b.v));
    }
    Ok((worst, n))
}

/// Full runs at each `ε` of the (descending) list against one narrow-gap run
/// from the same data, plus the manufactured-solution refinement table.
pub fn convergence_study(cfg: &ExperimentConfig, exec: Execution) -> Result<ConvergenceTable> {
    let eps_values = &cfg.params.eps_values;
    if eps_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("eps_values", "must be strictly descending"));
    }
    if eps_values.iter().any(|&e| e <= 0.0) {
        return Err(invalid("eps_values", "the full model needs eps > 0"));
    }
    let grid = cfg.grid2d()?;
    let tc = cfg.time_controls()?;
    let gap = cfg.gap_params()?;
    let s0 = config_state(cfg, grid.gx);
    let (lambda, mu) = (cfg.params.lambda, cfg.params.mu);
    let sar = run_sar_evolution(&s0, &Params::new(0.0, lambda, mu)?, &tc, &gap)?;
    let runs = map_slice(exec, eps_values, |&eps| -> Result<SimRecord> {
        run_evolution(&s0, &Params::new(eps, lambda, mu)?, &tc, &gap, &grid)
    });
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(runs.len());
    for (&eps, run) in eps_values.iter().zip(runs) {
        let rec = run?;
        let (d, n) = discrepancy(&rec, &sar)?;
        rows.push(ConvergenceRow {
            eps,
            discrepancy: d,
            ratio: rows.last().map(|prev| prev.discrepancy / d),
            verdict: rec.verdict.label().to_string(),
            compared_snapshots: n,
        });
    }
    let strictly_decreasing = (rows.len() > 1).then(|| rows.windows(2).all(|w| w[1].discrepancy < w[0].discrepancy));
    let mms_eps = cfg.params.eps.max(f64::MIN_POSITIVE);
    let mms = mms_study(mms_eps, &MMS_LEVELS, exec)?;
    Ok(ConvergenceTable {
        rows,
        sar_verdict: sar.verdict.label().to_string(),
        strictly_decreasing,
        mms_eps,
        mms,
    })
}

fn convergence_driver(cfg: &ExperimentConfig, exec: Execution, out: &mut OutputDir) -> Result<(bool, String)> {
    let table = convergence_study(cfg, exec)?;
    let body = table.rows.iter().map(|r| {
        [
            sci(r.eps),
            sci(r.discrepancy),
            sci_opt(r.ratio),
            r.verdict.clone(),
            r.compared_snapshots.to_string(),
        ]
    });
    out.csv(
        "convergence.csv",
        &["eps", "discrepancy", "ratio", "verdict", "compared_snapshots"],
        body,
    )?;
    let body = table.mms.iter().map(|r| {
        [
            r.level.nx.to_string(),
            r.level.nz.to_string(),
            sci(r.level.max_error),
            sci_opt(r.ratio),
            sci(r.level.trace_error),
            sci_opt(r.trace_ratio),
        ]
    });
    out.csv(
        "mms.csv",
        &["nx", "nz", "max_error", "ratio", "trace_error", "trace_ratio"],
        body,
    )?;
    out.json("convergence.json", &table)?;
    let msg = match table.strictly_decreasing {
        Some(true) => "discrepancy strictly decreasing".to_string(),
        Some(false) => "discrepancy not strictly decreasing".to_string(),
        None => "single aspect ratio, no comparison".to_string(),
    };
    Ok((true, msg))
}
