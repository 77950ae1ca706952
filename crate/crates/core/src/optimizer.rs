//! Per-slice optimizer state.
//!
//! The unit of update is a rank slice: row `k` of `W_dw` together with
//! column `k` of `W_up`. Moment estimates and bias-correction step counts
//! are kept per slice, so a slice that is not updated keeps its state
//! untouched as well.

use alloc::vec;
use alloc::vec::Vec;

use crate::adapter::DyLoraAdapter;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Adam with decoupled weight decay and bias correction.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub const fn adamw_default() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    m_up: Matrix,
    v_up: Matrix,
    m_dw: Matrix,
    v_dw: Matrix,
    slice_steps: Vec<u64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, adapter: &DyLoraAdapter) -> Self {
        let (m, d, r) = (adapter.out_dim(), adapter.in_dim(), adapter.r_max());
        let moments = matches!(kind, OptimizerKind::AdamW { .. });
        let dims = |rows, cols| {
            if moments {
                Matrix::zeros(rows, cols)
            } else {
                Matrix::zeros(0, 0)
            }
        };
        Self {
            kind,
            m_up: dims(m, r),
            v_up: dims(m, r),
            m_dw: dims(r, d),
            v_dw: dims(r, d),
            slice_steps: vec![0; r],
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of updates applied to the 1-based slice `k`.
    pub fn slice_steps(&self, k: usize) -> u64 {
        self.slice_steps[k - 1]
    }

    /// Updates slice `k` (1-based) given the gradient row for `W_dw` and
    /// column for `W_up`, both pre-scaled by the caller.
    pub(crate) fn step_slice(
        &mut self,
        adapter: &mut DyLoraAdapter,
        k: usize,
        g_dw_row: &[f64],
        g_up_col: &[f64],
        lr: f64,
    ) {
        let idx = k - 1;
        self.slice_steps[idx] += 1;
        let t = self.slice_steps[idx];
        let (w_up, w_dw) = adapter.factors_mut();
        let (m, r) = w_up.shape();
        let d = w_dw.cols();
        match self.kind {
            OptimizerKind::Sgd => {
                let dw = w_dw.as_mut_slice();
                for (j, g) in g_dw_row.iter().enumerate() {
                    dw[idx * d + j] -= lr * g;
                }
                let up = w_up.as_mut_slice();
                for (i, g) in g_up_col.iter().enumerate() {
                    up[i * r + idx] -= lr * g;
                }
            }
            OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                let adam = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *p *= 1.0 - lr * weight_decay;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
                };
                let (dw, mdw, vdw) = (
                    w_dw.as_mut_slice(),
                    self.m_dw.as_mut_slice(),
                    self.v_dw.as_mut_slice(),
                );
                for (j, &g) in g_dw_row.iter().enumerate() {
                    let at = idx * d + j;
                    adam(&mut dw[at], &mut mdw[at], &mut vdw[at], g);
                }
                let (up, mup, vup) = (
                    w_up.as_mut_slice(),
                    self.m_up.as_mut_slice(),
                    self.v_up.as_mut_slice(),
                );
                debug_assert_eq!(g_up_col.len(), m);
                for (i, &g) in g_up_col.iter().enumerate() {
                    let at = i * r + idx;
                    adam(&mut up[at], &mut mup[at], &mut vup[at], g);
                }
            }
        }
    }
}
