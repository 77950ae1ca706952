//! Dense row-major `f64` matrices.
//!
//! Row and column band extraction uses 1-based inclusive bounds, so
//! `slice_rows(a, 1, b)` keeps the first `b` rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Rejects wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                expected: alloc::format!("{} values", rows * cols),
                got: alloc::format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Param(alloc::format!(
                "non-finite entry at flat index {pos}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// I.i.d. `N(0, sigma^2)` entries, drawn in row-major order.
    pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Param(alloc::format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| sigma * rng.standard_normal())
            .collect();
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// 0-based element access.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err(
                "matmul",
                (self.cols, other.cols),
                (other.rows, other.cols),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        // i-k-j order: each out[i][j] still accumulates k = 0, 1, 2, ... in sequence
        for i in 0..m {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| s * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += s * other`, in place.
    pub fn add_scaled_assign(&mut self, s: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err("add_scaled_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Copy of rows `from..=to` (1-based).
    pub fn slice_rows(&self, from: usize, to: usize) -> Result<Matrix> {
        check_band(from, to, self.rows)?;
        let data = self.data[(from - 1) * self.cols..to * self.cols].to_vec();
        Ok(Matrix {
            rows: to - from + 1,
            cols: self.cols,
            data,
        })
    }

    /// Copy of columns `from..=to` (1-based).
    pub fn slice_cols(&self, from: usize, to: usize) -> Result<Matrix> {
        check_band(from, to, self.cols)?;
        let width = to - from + 1;
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[from - 1..to]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    /// Gathers the given 0-based columns, in order.
    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Singular values in descending order, via one-sided Jacobi rotations.
    pub fn singular_values(&self) -> Vec<f64> {
        // work on the taller orientation so columns are the short side
        let a = if self.rows >= self.cols {
            self.clone()
        } else {
            self.transpose()
        };
        let (m, n) = a.shape();
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..m).map(|i| a.get(i, j)).collect())
            .collect();
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                    let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                    let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                    if gamma == 0.0 {
                        continue;
                    }
                    off = off.max(gamma.abs() / libm::sqrt(alpha * beta).max(f64::MIN_POSITIVE));
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / libm::sqrt(1.0 + t * t);
                    let s = c * t;
                    let (head, tail) = cols.split_at_mut(q);
                    for (x, y) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                        (*x, *y) = (c * *x - s * *y, s * *x + c * *y);
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut sv: Vec<f64> = cols
            .iter()
            .map(|c| libm::sqrt(c.iter().map(|v| v * v).sum()))
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

fn check_band(from: usize, to: usize, extent: usize) -> Result<()> {
    if from == 0 || from > to || to > extent {
        return Err(Error::Bounds { from, to, extent });
    }
    Ok(())
}
