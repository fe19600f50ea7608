//! Small dense linear algebra and numerics shared by the learners and
//! estimators. Reductions use Neumaier-compensated summation so results are
//! invariant to row order at the 1e-12 level.

use crate::error::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Inverse logit, safe against overflow in either tail.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if abs(self.sum) >= abs(x) {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Sample standard deviation (n-1 divisor).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = KahanSum::new();
    for &x in xs {
        let d = x - m;
        acc.add(d * d);
    }
    sqrt(acc.value() / (n - 1) as f64)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = KahanSum::new();
    for i in 0..a.len() {
        acc.add(a[i] * b[i]);
    }
    acc.value()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            debug_assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// A new matrix holding the given rows in the given order.
    pub fn take_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// X'WX and X'Wy for weighted least squares, accumulated with compensation.
/// Returns (xtwx: p*p row-major, xtwy: p).
pub fn normal_equations(x: &Matrix, y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = x.cols;
    let mut xtwx = vec![KahanSum::new(); p * p];
    let mut xtwy = vec![KahanSum::new(); p];
    for i in 0..x.rows {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let xi = x.row(i);
        let wy = wi * y[i];
        for j in 0..p {
            let xij = xi[j];
            if xij == 0.0 {
                continue;
            }
            xtwy[j].add(xij * wy);
            let wx = wi * xij;
            for k in j..p {
                xtwx[j * p + k].add(wx * xi[k]);
            }
        }
    }
    let mut a = vec![0.0; p * p];
    for j in 0..p {
        for k in j..p {
            let v = xtwx[j * p + k].value();
            a[j * p + k] = v;
            a[k * p + j] = v;
        }
    }
    let b: Vec<f64> = xtwy.iter().map(|s| s.value()).collect();
    (a, b)
}

/// Solves the symmetric positive-definite system `a x = b` in place via
/// Cholesky. Returns an error if a pivot falls below `tol` (singular or
/// indefinite system).
pub fn cholesky_solve(a: &mut [f64], b: &mut [f64], p: usize, tol: f64) -> Result<Vec<f64>> {
    // Factorize a = L L' (lower triangle stored in a).
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            let l = a[j * p + k];
            d -= l * l;
        }
        if d <= tol {
            return Err(Error::Estimation(format!(
                "singular normal equations (pivot {d:e} at column {j})"
            )));
        }
        let dj = sqrt(d);
        a[j * p + j] = dj;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / dj;
        }
    }
    // Forward then backward substitution.
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * p + k] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in (i + 1)..p {
            v -= a[k * p + i] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    Ok(b.to_vec())
}

pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}
