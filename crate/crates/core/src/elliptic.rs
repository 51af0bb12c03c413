//! The transformed potential problem on the reference rectangle.
//!
//! With `G = u - v`, `D = u_x - v_x` and `S = z'D + v_x`, the pulled-back
//! Laplacian reads
//!
//! ```text
//! Δ̃w = ε² w_xx - 2ε² (S/G) w_xz + (1 + ε² S²)/G² w_zz + c_z w_z,
//! c_z = ε² (2 D S / G² - (z'(u_xx - v_xx) + v_xx) / G),
//! ```
//!
//! and `φ̃ = ψ + z'` where `-Δ̃ψ = c_z`, `ψ = 0` on the boundary.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid2D;
use crate::params::{Params, DEFAULT_TOUCHDOWN_GAP};
use crate::state::MembraneState;

/// Gap below which the mapped operator is treated as singular.
pub const SINGULAR_GAP: f64 = DEFAULT_TOUCHDOWN_GAP;

/// Acceptable normwise backward error of the potential solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Potential on the reference rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub grid: Grid2D,
    /// Homogeneous part, zero on all four edges.
    pub psi: Vec<f64>,
    /// `psi + z'`.
    pub phi_tilde: Vec<f64>,
}

impl PotentialField {
    pub fn from_psi(grid: Grid2D, psi: Vec<f64>) -> Self {
        let phi_tilde = psi
            .iter()
            .enumerate()
            .map(|(k, &p)| p + grid.z(grid.coords(k).1))
            .collect();
        PotentialField { grid, psi, phi_tilde }
    }

    /// The affine potential `φ̃ = z'` of a flat gap.
    pub fn affine(grid: Grid2D) -> Self {
        Self::from_psi(grid, vec![0.0; grid.len()])
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.phi_tilde[self.grid.index(i, j)]
    }
}

/// Which membrane a trace is taken on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    /// `z' = 0`, the lower membrane `v`.
    Lower,
    /// `z' = 1`, the upper membrane `u`.
    Upper,
}

/// Membrane geometry at one abscissa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Column {
    pub gap: f64,
    pub du: f64,
    pub dv: f64,
    pub d2u: f64,
    pub d2v: f64,
}

impl Column {
    fn slope(&self, z: f64) -> f64 {
        z * (self.du - self.dv) + self.dv
    }

    fn curvature(&self, z: f64) -> f64 {
        z * (self.d2u - self.d2v) + self.d2v
    }

    /// Non-divergence coefficients `(c_xz, c_zz, c_z)` at height `z`.
    pub fn coefficients(&self, eps2: f64, z: f64) -> (f64, f64, f64) {
        let g = self.gap;
        let d = self.du - self.dv;
        let s = self.slope(z);
        let cxz = -2.0 * eps2 * s / g;
        let czz = (1.0 + eps2 * s * s) / (g * g);
        let cz = eps2 * (2.0 * d * s / (g * g) - self.curvature(z) / g);
        (cxz, czz, cz)
    }
}

pub(crate) fn columns(s: &MembraneState) -> Vec<Column> {
    let (du, d2u) = s.grid.derivatives(&s.u);
    let (dv, d2v) = s.grid.derivatives(&s.v);
    (0..s.grid.len())
        .map(|i| Column {
            gap: s.u[i] - s.v[i],
            du: du[i],
            dv: dv[i],
            d2u: d2u[i],
            d2v: d2v[i],
        })
        .collect()
}

/// Central-difference geometry at interior node `i`.
pub(crate) fn interior_column(u: &[f64], v: &[f64], h: f64, i: usize) -> Column {
    let d1 = |w: &[f64]| (w[i + 1] - w[i - 1]) / (2.0 * h);
    let d2 = |w: &[f64]| (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h);
    Column {
        gap: u[i] - v[i],
        du: d1(u),
        dv: d1(v),
        d2u: d2(u),
        d2v: d2(v),
    }
}

/// Divergence-form coefficients `a_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionCoefficients {
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a21: Vec<f64>,
    pub a22: Vec<f64>,
}

/// Divergence-form drift coefficients `b_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftCoefficients {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Node-wise non-divergence coefficients used by the stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilCoefficients {
    pub eps2: f64,
    pub cxz: Vec<f64>,
    pub czz: Vec<f64>,
    pub cz: Vec<f64>,
}

/// Discrete `Δ̃` with Dirichlet identity rows, plus its coefficient fields.
#[derive(Clone, Debug)]
pub struct OperatorAssembly {
    pub grid: Grid2D,
    pub matrix: BandMatrix,
    pub stencil: StencilCoefficients,
    pub coeff_a: DiffusionCoefficients,
    pub coeff_b: DriftCoefficients,
}

impl OperatorAssembly {
    /// Writes the matrix as `row col value` lines.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "% {} {}", self.matrix.dim(), self.matrix.dim())?;
        for (r, c, v) in self.matrix.triplets() {
            writeln!(out, "{r} {c} {v:.16e}")?;
        }
        Ok(())
    }

    /// Applies the discrete operator to nodal values (identity on the boundary).
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        self.matrix.matvec(w)
    }
}

fn check_inputs(s: &MembraneState, p: &Params, grid: &Grid2D) -> Result<()> {
    p.validate()?;
    s.check_shape()?;
    if s.grid != grid.gx {
        return Err(Error::Structure(format!(
            "state has {} cells, potential grid has {}",
            s.grid.cells(),
            grid.gx.cells()
        )));
    }
    if !s.is_finite() {
        return Err(invalid("state", "non-finite displacement"));
    }
    let gap = s.gap_min();
    if gap < SINGULAR_GAP {
        return Err(Error::SingularGeometry {
            gap,
            threshold: SINGULAR_GAP,
        });
    }
    Ok(())
}

fn stencil_coefficients(cols: &[Column], eps: f64, grid: &Grid2D) -> StencilCoefficients {
    let eps2 = eps * eps;
    let n = grid.len();
    let mut out = StencilCoefficients {
        eps2,
        cxz: vec![0.0; n],
        czz: vec![0.0; n],
        cz: vec![0.0; n],
    };
    for (i, col) in cols.iter().enumerate() {
        for j in 0..=grid.nz() {
            let k = grid.index(i, j);
            let (cxz, czz, cz) = col.coefficients(eps2, grid.z(j));
            out.cxz[k] = cxz;
            out.czz[k] = czz;
            out.cz[k] = cz;
        }
    }
    out
}

/// Stencil weights of `Δ̃_h` at interior node `(i, j)` as `(node, weight)` pairs.
pub(crate) fn stencil_at(
    grid: &Grid2D,
    eps2: f64,
    cxz: f64,
    czz: f64,
    cz: f64,
    i: usize,
    j: usize,
) -> [(usize, f64); 9] {
    let hx = grid.gx.h();
    let hz = grid.hz();
    let wx = eps2 / (hx * hx);
    let wz = czz / (hz * hz);
    let wxz = cxz / (4.0 * hx * hz);
    let wd = cz / (2.0 * hz);
    [
        (grid.index(i, j), -2.0 * wx - 2.0 * wz),
        (grid.index(i - 1, j), wx),
        (grid.index(i + 1, j), wx),
        (grid.index(i, j - 1), wz - wd),
        (grid.index(i, j + 1), wz + wd),
        (grid.index(i + 1, j + 1), wxz),
        (grid.index(i - 1, j - 1), wxz),
        (grid.index(i + 1, j - 1), -wxz),
        (grid.index(i - 1, j + 1), -wxz),
    ]
}

/// Assembles the discrete non-divergence operator `Δ̃_h` for state `s`.
pub fn assemble_operator(s: &MembraneState, p: &Params, grid: &Grid2D) -> Result<OperatorAssembly> {
    check_inputs(s, p, grid)?;
    let cols = columns(s);
    let stencil = stencil_coefficients(&cols, p.eps, grid);
    let kl = grid.nz() + 2;
    let mut matrix = BandMatrix::zeros(grid.len(), kl, kl);
    let nx = grid.gx.cells();
    for i in 0..=nx {
        for j in 0..=grid.nz() {
            let k = grid.index(i, j);
            if grid.is_boundary(i, j) {
                matrix.set(k, k, 1.0);
                continue;
            }
            let weights = stencil_at(grid, stencil.eps2, stencil.cxz[k], stencil.czz[k], stencil.cz[k], i, j);
            for (c, w) in weights {
                matrix.add(k, c, w);
            }
        }
    }

    let eps2 = stencil.eps2;
    let n = grid.len();
    let mut coeff_a = DiffusionCoefficients {
        a11: vec![eps2; n],
        a12: vec![0.0; n],
        a21: vec![0.0; n],
        a22: vec![0.0; n],
    };
    let mut coeff_b = DriftCoefficients {
        b1: vec![0.0; n],
        b2: vec![0.0; n],
    };
    for (i, col) in cols.iter().enumerate() {
        let g = col.gap;
        let d = col.du - col.dv;
        for j in 0..=grid.nz() {
            let k = grid.index(i, j);
            let s = col.slope(grid.z(j));
            coeff_a.a12[k] = -eps2 * s / g;
            coeff_a.a21[k] = -eps2 * s / g;
            coeff_a.a22[k] = (1.0 + eps2 * s * s) / (g * g);
            coeff_b.b1[k] = -eps2 * d / g;
            coeff_b.b2[k] = eps2 * d * s / (g * g);
        }
    }
    Ok(OperatorAssembly {
        grid: *grid,
        matrix,
        stencil,
        coeff_a,
        coeff_b,
    })
}

/// Forcing `f` with `-Δ̃ψ = f`, sampled on every node of `grid`.
pub fn assemble_rhs(s: &MembraneState, p: &Params, grid: &Grid2D) -> Result<Vec<f64>> {
    check_inputs(s, p, grid)?;
    let cols = columns(s);
    Ok(stencil_coefficients(&cols, p.eps, grid).cz)
}

/// Factored operator that solves `-Δ̃_h ψ = f`, `ψ = 0` on the boundary,
/// for arbitrary forcing.
#[derive(Clone, Debug)]
pub struct PotentialSolver {
    pub grid: Grid2D,
    pub stencil: StencilCoefficients,
    lu: BandLu,
    norm: f64,
}

impl PotentialSolver {
    pub fn new(assembly: OperatorAssembly) -> Result<Self> {
        let norm = assembly.matrix.norm_inf();
        let lu = assembly.matrix.factor()?;
        Ok(PotentialSolver {
            grid: assembly.grid,
            stencil: assembly.stencil,
            lu,
            norm,
        })
    }

    /// `Δ̃_h w` at interior node `(i, j)`.
    pub(crate) fn apply_at(&self, w: &[f64], i: usize, j: usize) -> f64 {
        let k = self.grid.index(i, j);
        let st = &self.stencil;
        stencil_at(&self.grid, st.eps2, st.cxz[k], st.czz[k], st.cz[k], i, j)
            .iter()
            .map(|&(c, wt)| wt * w[c])
            .sum()
    }

    /// Residual of `Δ̃_h ψ = b` (identity rows on the boundary).
    fn residual(&self, psi: &[f64], b: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        (0..g.len())
            .map(|k| {
                let (i, j) = g.coords(k);
                let lhs = if g.is_boundary(i, j) {
                    psi[k]
                } else {
                    self.apply_at(psi, i, j)
                };
                b[k] - lhs
            })
            .collect()
    }

    /// Raw solve of `Δ̃_h x = b` with the stored factors.
    pub(crate) fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve(b)
    }

    /// Solves `-Δ̃_h ψ = f` on interior nodes with `ψ = 0` on the boundary.
    pub fn solve(&self, forcing: &[f64]) -> Result<Vec<f64>> {
        let g = &self.grid;
        if forcing.len() != g.len() {
            return Err(Error::Structure(format!(
                "forcing has {} entries, grid has {}",
                forcing.len(),
                g.len()
            )));
        }
        let b: Vec<f64> = (0..g.len())
            .map(|k| {
                let (i, j) = g.coords(k);
                if g.is_boundary(i, j) {
                    0.0
                } else {
                    -forcing[k]
                }
            })
            .collect();
        let b_norm = b.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let mut psi = self.lu.solve(&b);
        let mut error = f64::INFINITY;
        for _ in 0..4 {
            let r = self.residual(&psi, &b);
            let r_norm = r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let psi_norm = psi.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let scale = self.norm * psi_norm + b_norm;
            error = if scale > 0.0 { r_norm / scale } else { r_norm };
            if error <= 1e-14 || !error.is_finite() {
                break;
            }
            let dx = self.lu.solve(&r);
            psi.iter_mut().zip(dx).for_each(|(p, d)| *p += d);
        }
        if !(error <= SOLVE_TOLERANCE) {
            return Err(Error::LinearSolve {
                reason: "potential solve did not reach tolerance".into(),
                residual: error,
            });
        }
        Ok(psi)
    }
}

/// Solves the potential problem for membrane state `s`.
pub fn solve_potential(s: &MembraneState, p: &Params, grid: &Grid2D) -> Result<PotentialField> {
    let forcing = assemble_rhs(s, p, grid)?;
    let solver = PotentialSolver::new(assemble_operator(s, p, grid)?)?;
    Ok(PotentialField::from_psi(*grid, solver.solve(&forcing)?))
}

/// `∂φ̃/∂z'` along an edge by the one-sided three-point formula.
pub fn boundary_z_derivative(phi: &PotentialField, edge: Edge) -> Result<Vec<f64>> {
    let g = &phi.grid;
    let nz = g.nz();
    if nz < 3 {
        return Err(Error::Structure(format!("need at least 3 z-cells, got {nz}")));
    }
    Ok(edge_trace(g, &phi.phi_tilde, edge))
}

pub(crate) fn edge_trace(g: &Grid2D, phi_tilde: &[f64], edge: Edge) -> Vec<f64> {
    let nz = g.nz();
    let hz = g.hz();
    (0..g.gx.len())
        .map(|i| {
            let at = |j: usize| phi_tilde[g.index(i, j)];
            match edge {
                Edge::Upper => (3.0 * at(nz) - 4.0 * at(nz - 1) + at(nz - 2)) / (2.0 * hz),
                Edge::Lower => (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * hz),
            }
        })
        .collect()
}

/// Electrostatic loads on the two membranes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLoad {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl TraceLoad {
    pub fn max_norms(&self) -> (f64, f64) {
        let m = |w: &[f64]| w.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        (m(&self.g1), m(&self.g2))
    }
}

pub(crate) fn loads_from_traces(
    s: &MembraneState,
    eps: f64,
    upper: &[f64],
    lower: &[f64],
) -> TraceLoad {
    let (du, _) = s.grid.derivatives(&s.u);
    let (dv, _) = s.grid.derivatives(&s.v);
    let eps2 = eps * eps;
    let n = s.grid.len();
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    for i in 0..n {
        let gap2 = (s.u[i] - s.v[i]).powi(2);
        g1[i] = (1.0 + eps2 * du[i] * du[i]) / gap2 * upper[i] * upper[i];
        g2[i] = (1.0 + eps2 * dv[i] * dv[i]) / gap2 * lower[i] * lower[i];
    }
    TraceLoad { g1, g2 }
}

/// Loads `g₁ = (1 + ε²u_x²)/(u-v)² |φ̃_z(·,1)|²` and the analogous `g₂` at `z' = 0`.
pub fn membrane_loads(s: &MembraneState, phi: &PotentialField, p: &Params) -> Result<TraceLoad> {
    s.check_shape()?;
    if phi.grid.gx != s.grid {
        return Err(Error::Structure("potential and state grids differ".into()));
    }
    let upper = boundary_z_derivative(phi, Edge::Upper)?;
    let lower = boundary_z_derivative(phi, Edge::Lower)?;
    Ok(loads_from_traces(s, p.eps, &upper, &lower))
}

/// Potential solve followed by load evaluation.
pub fn potential_and_loads(
    s: &MembraneState,
    p: &Params,
    grid: &Grid2D,
) -> Result<(PotentialField, TraceLoad)> {
    let phi = solve_potential(s, p, grid)?;
    let loads = membrane_loads(s, &phi, p)?;
    Ok((phi, loads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;

    fn bump(grid: Grid1D, a: f64, b: f64) -> MembraneState {
        MembraneState::from_fns(grid, |x| -a * (1.0 - x * x), |x| -1.0 + b * (1.0 - x * x) * (1.0 + 0.3 * x))
    }

    #[test]
    fn rest_state_reduces_to_anisotropic_laplacian() {
        let g = Grid2D::new(16, 8).unwrap();
        let s = MembraneState::rest(g.gx);
        let p = Params::new(0.3, 0.0, 0.0).unwrap();
        let a = assemble_operator(&s, &p, &g).unwrap();
        for k in 0..g.len() {
            assert!(a.stencil.cxz[k].abs() < 1e-15);
            assert!(a.stencil.cz[k].abs() < 1e-15);
            assert!((a.stencil.czz[k] - 1.0).abs() < 1e-15);
        }
        let w: Vec<f64> = (0..g.len()).map(|k| g.z(g.coords(k).1).powi(2)).collect();
        let out = a.apply(&w);
        for k in 0..g.len() {
            let (i, j) = g.coords(k);
            if !g.is_boundary(i, j) {
                assert!((out[k] - 2.0).abs() < 1e-10, "{}", out[k]);
            }
        }
        assert!(assemble_rhs(&s, &p, &g).unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn zz_coefficient_matches_closed_form() {
        let g = Grid2D::new(20, 10).unwrap();
        let s = bump(g.gx, 0.2, 0.1);
        let eps = 0.4;
        let a = assemble_operator(&s, &Params::new(eps, 0.0, 0.0).unwrap(), &g).unwrap();
        let (du, _) = g.gx.derivatives(&s.u);
        let (dv, _) = g.gx.derivatives(&s.v);
        for i in 0..=20 {
            for j in 0..=10 {
                let z = g.z(j);
                let sl = z * (du[i] - dv[i]) + dv[i];
                let want = (1.0 + eps * eps * sl * sl) / (s.u[i] - s.v[i]).powi(2);
                assert!((a.stencil.czz[g.index(i, j)] - want).abs() < 1e-13);
            }
        }
        assert!(a.coeff_a.a12 == a.coeff_a.a21);
        let gmax = s.gap_max();
        assert!(a.coeff_a.a22.iter().all(|&v| v >= 1.0 / (gmax * gmax) - 1e-14));
    }

    #[test]
    fn forcing_vanishes_without_aspect_ratio() {
        let g = Grid2D::new(16, 8).unwrap();
        let s = bump(g.gx, 0.3, 0.2);
        let f = assemble_rhs(&s, &Params::new(0.0, 1.0, 1.0).unwrap(), &g).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forcing_at_parabolic_vertex() {
        // Independent evaluation: with u = -δ(1 - x²), v = -1, at x = 0 the
        // slope terms vanish and only -ε² u_xx / (u - v) survives on z' = 1.
        let g = Grid2D::new(40, 10).unwrap();
        let delta = 0.25;
        let eps = 0.3;
        let s = MembraneState::from_fns(g.gx, |x| -delta * (1.0 - x * x), |_| -1.0);
        let f = assemble_rhs(&s, &Params::new(eps, 0.0, 0.0).unwrap(), &g).unwrap();
        let uxx = 2.0 * delta;
        let want = -(eps * eps) * uxx / (1.0 - delta);
        assert!((f[g.index(20, 10)] - want).abs() < 1e-12);
        assert!((want + 2.0 * delta * eps * eps / (1.0 - delta)).abs() < 1e-15);
    }

    #[test]
    fn rest_state_potential_is_affine_with_unit_loads() {
        let g = Grid2D::new(16, 8).unwrap();
        let s = MembraneState::rest(g.gx);
        let p = Params::new(0.1, 1.0, 1.0).unwrap();
        let (phi, loads) = potential_and_loads(&s, &p, &g).unwrap();
        assert!(phi.psi.iter().all(|&v| v == 0.0));
        for k in 0..g.len() {
            assert_eq!(phi.phi_tilde[k], g.z(g.coords(k).1));
        }
        for i in 0..g.gx.len() {
            assert!((loads.g1[i] - 1.0).abs() < 1e-12);
            assert!((loads.g2[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn touching_membranes_are_singular() {
        let g = Grid2D::new(16, 8).unwrap();
        let s = MembraneState::from_fns(g.gx, |x| -0.5 * (1.0 - x * x), |x| -1.0 + 0.4999 * (1.0 - x * x));
        let err = solve_potential(&s, &Params::new(0.1, 0.0, 0.0).unwrap(), &g).unwrap_err();
        assert!(matches!(err, Error::SingularGeometry { .. }));
    }

    #[test]
    fn divergence_form_is_consistent() {
        // ∂_x a12 + ∂_z a22 - b2 recovers c_z and ∂_z a21 - b1 = 0.
        let g = Grid2D::new(40, 16).unwrap();
        let s = bump(g.gx, 0.2, 0.15);
        let p = Params::new(0.5, 0.0, 0.0).unwrap();
        let a = assemble_operator(&s, &p, &g).unwrap();
        let eps2 = p.eps * p.eps;
        let u = |x: f64| -0.2 * (1.0 - x * x);
        let v = |x: f64| -1.0 + 0.15 * (1.0 - x * x) * (1.0 + 0.3 * x);
        let coeffs = |x: f64, z: f64| {
            let d = 1e-5;
            let ux = (u(x + d) - u(x - d)) / (2.0 * d);
            let vx = (v(x + d) - v(x - d)) / (2.0 * d);
            let gp = u(x) - v(x);
            let sl = z * (ux - vx) + vx;
            (-eps2 * sl / gp, (1.0 + eps2 * sl * sl) / (gp * gp), -eps2 * (ux - vx) / gp, eps2 * (ux - vx) * sl / (gp * gp))
        };
        let (x, z) = (0.35, 0.6);
        let d = 1e-4;
        let (_, _, b1, b2) = coeffs(x, z);
        let da12 = (coeffs(x + d, z).0 - coeffs(x - d, z).0) / (2.0 * d);
        let da22 = (coeffs(x, z + d).1 - coeffs(x, z - d).1) / (2.0 * d);
        let da21 = (coeffs(x, z + d).0 - coeffs(x, z - d).0) / (2.0 * d);
        let cz_div = da12 + da22 - b2;
        assert!((da21 - b1).abs() < 1e-7);
        // Analytic derivatives at the same point.
        let (ux, uxx) = (0.4 * x, 0.4);
        let vx = 0.15 * (-2.0 * x * (1.0 + 0.3 * x) + 0.3 * (1.0 - x * x));
        let vxx = 0.15 * (-2.0 * (1.0 + 0.3 * x) - 1.2 * x);
        let col = Column { gap: u(x) - v(x), du: ux, dv: vx, d2u: uxx, d2v: vxx };
        let (_, _, cz) = col.coefficients(eps2, z);
        assert!((cz - cz_div).abs() < 1e-6, "{cz} vs {cz_div}");
        let k = g.index(10, 8);
        let (du, _) = g.gx.derivatives(&s.u);
        let (dv, _) = g.gx.derivatives(&s.v);
        let want_b1 = -eps2 * (du[10] - dv[10]) / (s.u[10] - s.v[10]);
        assert!((a.coeff_b.b1[k] - want_b1).abs() < 1e-14);
    }

    #[test]
    fn even_state_gives_even_potential_and_loads() {
        let g = Grid2D::new(24, 12).unwrap();
        let s = MembraneState::from_fns(g.gx, |x| -0.2 * (1.0 - x * x), |x| -1.0 + 0.1 * (1.0 - x * x).powi(2));
        let p = Params::new(0.3, 0.0, 0.0).unwrap();
        let (phi, loads) = potential_and_loads(&s, &p, &g).unwrap();
        for i in 0..=24 {
            let m = g.gx.mirror(i);
            for j in 0..=12 {
                assert!((phi.at(i, j) - phi.at(m, j)).abs() < 1e-12);
            }
            assert!((loads.g1[i] - loads.g1[m]).abs() < 1e-12);
            assert!((loads.g2[i] - loads.g2[m]).abs() < 1e-12);
        }
        assert!(loads.g1.iter().chain(&loads.g2).all(|&g| g >= 0.0));
    }

    #[test]
    fn loads_approach_inverse_square_gap_as_aspect_ratio_vanishes() {
        let g = Grid2D::new(32, 16).unwrap();
        let s = bump(g.gx, 0.2, 0.1);
        let mut prev = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let (_, loads) = potential_and_loads(&s, &Params::new(eps, 0.0, 0.0).unwrap(), &g).unwrap();
            let dev = (0..g.gx.len())
                .map(|i| (loads.g1[i] * (s.u[i] - s.v[i]).powi(2) - 1.0).abs())
                .fold(0.0, f64::max);
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn coo_dump_lists_identity_rows() {
        let g = Grid2D::new(8, 8).unwrap();
        let s = MembraneState::rest(g.gx);
        let a = assemble_operator(&s, &Params::new(0.1, 0.0, 0.0).unwrap(), &g).unwrap();
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("0 0 1.0"));
    }
}
