//! Mean-reduced losses returning both the value and `dL/dpred`.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Matrix,
}

/// Supervision for a set of columns (samples).
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `m x n` regression targets.
    Regression(Matrix),
    /// 1-based class labels, one per column.
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.cols(),
            Targets::Classes(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Targets for the given 0-based sample indices.
    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(y.select_cols(idx)),
            Targets::Classes(l) => Targets::Classes(idx.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn loss(&self, pred: &Matrix) -> Result<LossGrad> {
        match self {
            Targets::Regression(y) => mse(pred, y),
            Targets::Classes(l) => cross_entropy(pred, l),
        }
    }
}

/// Mean of squared errors over every entry.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<LossGrad> {
    if pred.shape() != target.shape() {
        return Err(shape_err("mse", target.shape(), pred.shape()));
    }
    let n = pred.as_slice().len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    Ok(LossGrad {
        loss,
        grad: diff.scale(2.0 / n),
    })
}

/// Softmax cross-entropy, averaged over columns. `logits` is `C x n`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossGrad> {
    let (classes, n) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "cross_entropy",
            expected: alloc::format!("{n} labels"),
            got: alloc::format!("{} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&c| c == 0 || c > classes) {
        return Err(Error::Param(alloc::format!(
            "class label {bad} outside [1, {classes}]"
        )));
    }
    let mut grad = Matrix::zeros(classes, n);
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let max = (0..classes)
            .map(|i| logits.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..classes {
            z += libm::exp(logits.get(i, j) - max);
        }
        let log_z = libm::log(z) + max;
        total += log_z - logits.get(label - 1, j);
        for i in 0..classes {
            let p = libm::exp(logits.get(i, j) - log_z);
            let onehot = if i == label - 1 { 1.0 } else { 0.0 };
            grad.set(i, j, (p - onehot) / n as f64);
        }
    }
    Ok(LossGrad {
        loss: total / n as f64,
        grad,
    })
}

/// Fraction of columns whose arg-max row matches the 1-based label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.cols() {
        return Err(shape_err(
            "accuracy",
            (logits.rows(), labels.len()),
            logits.shape(),
        ));
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(j, &label)| {
            let mut best = 0;
            for i in 1..logits.rows() {
                if logits.get(i, j) > logits.get(best, j) {
                    best = i;
                }
            }
            best + 1 == label
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
