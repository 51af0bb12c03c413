//! Uniform grids on `I = (-1, 1)` and on the reference rectangle `I × (0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform grid on `[-1, 1]` with an even number of cells, so `x = 0` is a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
}

impl Grid1D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(invalid("nx", format!("{n} must be even and >= 8")));
        }
        Ok(Grid1D { n })
    }

    /// Number of cells.
    pub fn cells(&self) -> usize {
        self.n
    }

    /// Number of nodes, `cells + 1`.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        2.0 / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n {
            1.0
        } else {
            -1.0 + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    /// Index of the mirror node `-x_i`.
    pub fn mirror(&self, i: usize) -> usize {
        self.n - i
    }

    /// Index of the midpoint node `x = 0`.
    pub fn mid(&self) -> usize {
        self.n / 2
    }

    /// Locates the cell containing `x` and the local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x + 1.0) / self.h()).clamp(0.0, self.n as f64);
        let i = (s.floor() as usize).min(self.n - 1);
        (i, s - i as f64)
    }

    /// Piecewise-linear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (i, t) = self.locate(x);
        if t == 0.0 {
            values[i]
        } else if t == 1.0 {
            values[i + 1]
        } else {
            (1.0 - t) * values[i] + t * values[i + 1]
        }
    }

    /// Composite trapezoid rule over `[-1, 1]`.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let n = self.n;
        let inner: f64 = values[1..n].iter().sum();
        self.h() * (inner + 0.5 * (values[0] + values[n]))
    }

    /// First and second derivatives by central differences in the interior
    /// and second-order one-sided differences at `x = ±1`.
    pub fn derivatives(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let h = self.h();
        let mut d1 = vec![0.0; n + 1];
        let mut d2 = vec![0.0; n + 1];
        for i in 1..n {
            d1[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
            d2[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
        }
        d1[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
        d1[n] = (3.0 * values[n] - 4.0 * values[n - 1] + values[n - 2]) / (2.0 * h);
        d2[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / (h * h);
        d2[n] = (2.0 * values[n] - 5.0 * values[n - 1] + 4.0 * values[n - 2] - values[n - 3]) / (h * h);
        (d1, d2)
    }
}

/// Tensor grid on the reference rectangle `[-1, 1] × [0, 1]`.
///
/// Nodes are numbered with `z` running fastest: `(i, j) -> i * (nz + 1) + j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid2D {
    pub gx: Grid1D,
    nz: usize,
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize) -> Result<Self> {
        let gx = Grid1D::new(nx)?;
        Self::from_parts(gx, nz)
    }

    pub fn from_parts(gx: Grid1D, nz: usize) -> Result<Self> {
        if nz < 8 {
            return Err(invalid("nz", format!("{nz} must be >= 8")));
        }
        Ok(Grid2D { gx, nz })
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn hz(&self) -> f64 {
        1.0 / self.nz as f64
    }

    pub fn z(&self, j: usize) -> f64 {
        if j == self.nz {
            1.0
        } else {
            j as f64 * self.hz()
        }
    }

    pub fn znodes(&self) -> Vec<f64> {
        (0..=self.nz).map(|j| self.z(j)).collect()
    }

    /// Total node count `(nx + 1) * (nz + 1)`.
    pub fn len(&self) -> usize {
        self.gx.len() * (self.nz + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * (self.nz + 1) + j
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / (self.nz + 1), k % (self.nz + 1))
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || i == self.gx.cells() || j == 0 || j == self.nz
    }

    /// Bilinear interpolation of nodal `values` at `(x, z)`.
    pub fn interpolate(&self, values: &[f64], x: f64, z: f64) -> f64 {
        let (i, tx) = self.gx.locate(x);
        let s = (z / self.hz()).clamp(0.0, self.nz as f64);
        let j = (s.floor() as usize).min(self.nz - 1);
        let tz = s - j as f64;
        let v00 = values[self.index(i, j)];
        let v10 = values[self.index(i + 1, j)];
        let v01 = values[self.index(i, j + 1)];
        let v11 = values[self.index(i + 1, j + 1)];
        (1.0 - tx) * ((1.0 - tz) * v00 + tz * v01) + tx * ((1.0 - tz) * v10 + tz * v11)
    }

    /// Two-dimensional composite trapezoid rule.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let nx = self.gx.cells();
        let nz = self.nz;
        let mut sum = 0.0;
        for i in 0..=nx {
            let wx = if i == 0 || i == nx { 0.5 } else { 1.0 };
            for j in 0..=nz {
                let wz = if j == 0 || j == nz { 0.5 } else { 1.0 };
                sum += wx * wz * values[self.index(i, j)];
            }
        }
        sum * self.gx.h() * self.hz()
    }
}
