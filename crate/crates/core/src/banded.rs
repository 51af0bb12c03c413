//! Banded matrices with LU factorization (partial pivoting) and a
//! tridiagonal solver for the membrane heat step.

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage is row-major with `kl` extra super-diagonals reserved for the
/// fill created by row interchanges during factorization.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn offset(&self, r: usize, c: usize) -> usize {
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    pub fn in_band(&self, r: usize, c: usize) -> bool {
        c + self.kl >= r && c <= r + self.ku
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if self.in_band(r, c) {
            self.data[self.offset(r, c)]
        } else {
            0.0
        }
    }

    /// Adds `value` to entry `(r, c)`; panics if the entry lies outside the band.
    pub fn add(&mut self, r: usize, c: usize, value: f64) {
        assert!(self.in_band(r, c), "entry ({r}, {c}) outside band");
        let k = self.offset(r, c);
        self.data[k] += value;
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        assert!(self.in_band(r, c), "entry ({r}, {c}) outside band");
        let k = self.offset(r, c);
        self.data[k] = value;
    }

    /// Mutable view of row `r` covering columns `r - kl ..= r + ku`
    /// (entries before column 0 or past `n - 1` must stay zero).
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let start = r * self.width;
        &mut self.data[start..start + self.kl + self.ku + 1]
    }

    /// Column range stored for row `r`.
    pub fn row_columns(&self, r: usize) -> std::ops::RangeInclusive<usize> {
        r.saturating_sub(self.kl)..=(r + self.ku).min(self.n - 1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row_columns(r).map(|c| self.data[self.offset(r, c)] * x[c]).sum())
            .collect()
    }

    /// Max row sum of absolute values.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| self.row_columns(r).map(|c| self.data[self.offset(r, c)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Nonzero entries as `(row, col, value)` triplets.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for r in 0..self.n {
            for c in self.row_columns(r) {
                let v = self.data[self.offset(r, c)];
                if v != 0.0 {
                    out.push((r, c, v));
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |r, c| self.get(r, c))
    }

    /// LU factorization with partial pivoting, consuming the matrix.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = self.kl + self.ku;
        let mut pivots = vec![0usize; n];
        // Last column that can be nonzero in each row, including fill.
        let mut row_end: Vec<usize> = (0..n).map(|r| (r + self.ku).min(n - 1)).collect();
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.offset(k, k)].abs();
            for r in k + 1..=last {
                let a = self.data[self.offset(r, k)].abs();
                if a > best {
                    best = a;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::LinearSolve {
                    reason: format!("zero pivot in column {k}"),
                    residual: f64::NAN,
                });
            }
            pivots[k] = p;
            if p != k {
                let cmax = row_end[k].max(row_end[p]);
                row_end.swap(k, p);
                row_end[k] = cmax;
                for c in k..=cmax {
                    let a = self.offset(k, c);
                    let b = self.offset(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot_at = self.offset(k, k);
            let pivot = self.data[pivot_at];
            let cmax = row_end[k];
            debug_assert!(cmax <= (k + reach).min(n - 1));
            let len = cmax - k;
            let width = self.width;
            let (head, tail) = self.data.split_at_mut((k + 1) * width);
            let pivot_row = &head[pivot_at + 1..=pivot_at + len];
            for r in k + 1..=last {
                let at = (r - k - 1) * width + (k + kl - r);
                let l = tail[at] / pivot;
                tail[at] = l;
                if l != 0.0 {
                    row_end[r] = row_end[r].max(cmax);
                    let row = &mut tail[at + 1..=at + len];
                    for (a, b) in row.iter_mut().zip(pivot_row) {
                        *a -= l * b;
                    }
                }
            }
        }
        Ok(BandLu { lu: self, pivots })
    }
}

/// Factorized band matrix.
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        let reach = m.kl + m.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + m.kl).min(n - 1) {
                    b[r] -= m.data[m.offset(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let base = m.offset(k, k);
            let mut s = b[k];
            for d in 1..=reach.min(n - 1 - k) {
                s -= m.data[base + d] * b[k + d];
            }
            b[k] = s / m.data[base];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Constant-coefficient tridiagonal system `(lower, diag, upper)` factored
/// once and reused for many right-hand sides (Thomas algorithm).
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    lower: f64,
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(n: usize, lower: f64, diag: f64, upper: f64) -> Self {
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        for i in 0..n {
            let d = if i == 0 { diag } else { diag - lower * c_prime[i - 1] };
            denom[i] = d;
            c_prime[i] = upper / d;
        }
        Tridiagonal {
            lower,
            c_prime,
            denom,
        }
    }

    pub fn dim(&self) -> usize {
        self.denom.len()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.denom.len();
        b[0] /= self.denom[0];
        for i in 1..n {
            b[i] = (b[i] - self.lower * b[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            b[i] -= self.c_prime[i] * b[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, kl: usize, ku: usize) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, kl, ku);
        for r in 0..n {
            for c in a.row_columns(r) {
                let v = (r as f64 * 1.3 + c as f64 * 2.7).sin();
                a.set(r, c, if r == c { 0.05 * v } else { v });
            }
        }
        a
    }

    #[test]
    fn pivoted_band_lu_matches_dense_solve() {
        let a = sample(40, 3, 2);
        let dense = a.to_dense();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = a.clone().factor().unwrap().solve(&b);
        let reference = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for i in 0..40 {
            assert!((x[i] - reference[i]).abs() < 1e-9 * (1.0 + reference[i].abs()));
        }
        let r = a.matvec(&x);
        for i in 0..40 {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_reports_zero_pivot() {
        let a = BandMatrix::zeros(5, 1, 1);
        assert!(a.factor().is_err());
    }

    #[test]
    fn tridiagonal_solve() {
        let t = Tridiagonal::new(6, -1.0, 2.5, -1.0);
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let mut b: Vec<f64> = (0..6)
            .map(|i| {
                let left = if i > 0 { -x[i - 1] } else { 0.0 };
                let right = if i < 5 { -x[i + 1] } else { 0.0 };
                left + 2.5 * x[i] + right
            })
            .collect();
        t.solve_in_place(&mut b);
        for i in 0..6 {
            assert!((b[i] - x[i]).abs() < 1e-13);
        }
    }
}
