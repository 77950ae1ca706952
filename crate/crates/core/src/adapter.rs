//! Frozen linear map plus a trainable, rank-truncatable low-rank factor pair.
//!
//! For a sampled rank `b` the adapter computes
//!
//! ```text
//! h = W0 x + (alpha / b) * W_up[:, 1..=b] * (W_dw[1..=b, :] * x)
//! ```
//!
//! `W_up` starts at zero so a fresh adapter reproduces `W0 x` exactly at
//! every rank. The divisor is always the rank in use, not `r_max`.

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub const DEFAULT_ALPHA: f64 = 16.0;
pub const DEFAULT_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterSpec {
    pub r_min: usize,
    pub r_max: usize,
    pub alpha: f64,
    /// Standard deviation of the `W_dw` initializer.
    pub sigma: f64,
}

impl AdapterSpec {
    pub fn new(r_min: usize, r_max: usize) -> Self {
        Self {
            r_min,
            r_max,
            alpha: DEFAULT_ALPHA,
            sigma: DEFAULT_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyLoraAdapter {
    w0: Matrix,
    w_up: Matrix,
    w_dw: Matrix,
    alpha: f64,
    r_min: usize,
    r_max: usize,
}

/// Gradients of a scalar loss with respect to the `b`-truncated factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    /// `m x b`
    pub g_up: Matrix,
    /// `b x d`
    pub g_dw: Matrix,
    pub b: usize,
}

impl AdapterGrads {
    pub fn zeros(m: usize, d: usize, b: usize) -> Self {
        Self {
            g_up: Matrix::zeros(m, b),
            g_dw: Matrix::zeros(b, d),
            b,
        }
    }
}

fn check_range(r_min: usize, r_max: usize, m: usize, d: usize) -> Result<()> {
    if r_min == 0 || r_min > r_max || r_max > m.min(d) {
        return Err(Error::Config(alloc::format!(
            "rank range [{r_min}, {r_max}] invalid for a {m}x{d} base map (need 1 <= r_min <= r_max <= {})",
            m.min(d)
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(alloc::format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

impl DyLoraAdapter {
    /// Zero `W_up`, Gaussian `W_dw`.
    pub fn init(rng: &mut Rng, w0: Matrix, spec: AdapterSpec) -> Result<Self> {
        let (m, d) = w0.shape();
        check_range(spec.r_min, spec.r_max, m, d)?;
        check_alpha(spec.alpha)?;
        if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "sigma must be positive, got {}",
                spec.sigma
            )));
        }
        let w_dw = Matrix::gaussian(rng, spec.r_max, d, spec.sigma)?;
        Ok(Self {
            w0,
            w_up: Matrix::zeros(m, spec.r_max),
            w_dw,
            alpha: spec.alpha,
            r_min: spec.r_min,
            r_max: spec.r_max,
        })
    }

    /// Reassembles an adapter from stored parts, e.g. a checkpoint.
    pub fn from_parts(
        w0: Matrix,
        w_up: Matrix,
        w_dw: Matrix,
        alpha: f64,
        r_min: usize,
        r_max: usize,
    ) -> Result<Self> {
        let (m, d) = w0.shape();
        check_range(r_min, r_max, m, d)?;
        check_alpha(alpha)?;
        if w_up.shape() != (m, r_max) {
            return Err(shape_err("from_parts w_up", (m, r_max), w_up.shape()));
        }
        if w_dw.shape() != (r_max, d) {
            return Err(shape_err("from_parts w_dw", (r_max, d), w_dw.shape()));
        }
        Ok(Self {
            w0,
            w_up,
            w_dw,
            alpha,
            r_min,
            r_max,
        })
    }

    /// Same factors, different lower rank bound. Used to evaluate a
    /// single-rank model truncated below its training rank.
    pub fn with_r_min(&self, r_min: usize) -> Result<Self> {
        check_range(r_min, self.r_max, self.out_dim(), self.in_dim())?;
        let mut out = self.clone();
        out.r_min = r_min;
        Ok(out)
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }
    pub fn w_up(&self) -> &Matrix {
        &self.w_up
    }
    pub fn w_dw(&self) -> &Matrix {
        &self.w_dw
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn r_min(&self) -> usize {
        self.r_min
    }
    pub fn r_max(&self) -> usize {
        self.r_max
    }
    /// `m`
    pub fn out_dim(&self) -> usize {
        self.w0.rows()
    }
    /// `d`
    pub fn in_dim(&self) -> usize {
        self.w0.cols()
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.w_up, &mut self.w_dw)
    }

    pub fn check_rank(&self, b: usize) -> Result<()> {
        if b < self.r_min || b > self.r_max {
            return Err(Error::Rank {
                b,
                r_min: self.r_min,
                r_max: self.r_max,
            });
        }
        Ok(())
    }

    /// `(W_dw[1..=b, :], W_up[:, 1..=b])`
    pub fn truncate(&self, b: usize) -> Result<(Matrix, Matrix)> {
        self.check_rank(b)?;
        Ok((self.w_dw.slice_rows(1, b)?, self.w_up.slice_cols(1, b)?))
    }

    /// The `b`-th row of `W_dw` and `b`-th column of `W_up`.
    pub fn row_col_at(&self, b: usize) -> Result<(Matrix, Matrix)> {
        self.check_rank(b)?;
        Ok((self.w_dw.slice_rows(b, b)?, self.w_up.slice_cols(b, b)?))
    }

    pub fn scale_at(&self, b: usize) -> f64 {
        self.alpha / b as f64
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.in_dim() {
            return Err(shape_err(
                "adapter input",
                (self.in_dim(), x.cols()),
                x.shape(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix, b: usize) -> Result<Matrix> {
        self.check_rank(b)?;
        self.check_input(x)?;
        let (dw, up) = self.truncate(b)?;
        let low = up.matmul(&dw.matmul(x)?)?;
        let mut h = self.w0.matmul(x)?;
        h.add_scaled_assign(self.scale_at(b), &low)?;
        Ok(h)
    }

    /// Chain rule through the truncated forward pass, given `dL/dh`.
    pub fn backward(&self, x: &Matrix, b: usize, g_out: &Matrix) -> Result<AdapterGrads> {
        self.check_rank(b)?;
        self.check_input(x)?;
        if g_out.shape() != (self.out_dim(), x.cols()) {
            return Err(shape_err(
                "backward g_out",
                (self.out_dim(), x.cols()),
                g_out.shape(),
            ));
        }
        let s = self.scale_at(b);
        let (dw, up) = self.truncate(b)?;
        let z = dw.matmul(x)?;
        let g_up = g_out.matmul(&z.transpose())?.scale(s);
        let g_z = up.transpose().matmul(g_out)?;
        let g_dw = g_z.matmul(&x.transpose())?.scale(s);
        Ok(AdapterGrads { g_up, g_dw, b })
    }

    /// `(alpha / b) * W_up[:, 1..=b] * W_dw[1..=b, :]`
    pub fn delta(&self, b: usize) -> Result<Matrix> {
        let (dw, up) = self.truncate(b)?;
        Ok(up.matmul(&dw)?.scale(self.scale_at(b)))
    }

    /// Dense deployable weight `W0 + delta(b)`.
    pub fn merge(&self, b: usize) -> Result<Matrix> {
        self.w0.add(&self.delta(b)?)
    }
}
