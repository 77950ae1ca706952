//! Synthetic tasks with known structure.
//!
//! [`TeacherTask`] regresses onto `(W0 + Δ*) x` where `Δ*` has a planted rank.
//! [`ClassifyTask`] puts an adapter on the linear head over frozen random
//! features.

use alloc::vec::Vec;

use crate::adapter::DyLoraAdapter;
use crate::error::{Error, Result};
use crate::loss::{accuracy, mse, Targets};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Share of samples held out for evaluation.
pub const EVAL_FRACTION: f64 = 0.25;

/// Inputs as columns plus their supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_cols(idx),
            targets: self.targets.select(idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Lower is better.
    Mse,
    /// Higher is better.
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// `a` at least as good as `b`.
    pub fn at_least_as_good(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Mse => a <= b,
            MetricKind::Accuracy => a >= b,
        }
    }

    pub fn strictly_better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Mse => a < b,
            MetricKind::Accuracy => a > b,
        }
    }
}

/// What the trainer and bench need from a task.
pub trait Task {
    /// Frozen base map the adapter wraps.
    fn base_weight(&self) -> &Matrix;
    fn train_set(&self) -> &Dataset;
    fn eval_set(&self) -> &Dataset;
    fn metric_kind(&self) -> MetricKind;
}

fn split_sizes(n: usize) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::Config(alloc::format!(
            "need at least 2 samples for a train/eval split, got {n}"
        )));
    }
    let eval = ((n as f64 * EVAL_FRACTION) as usize).clamp(1, n - 1);
    Ok((n - eval, eval))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherSpec {
    pub m: usize,
    pub d: usize,
    pub r_star: usize,
    pub samples: usize,
    pub noise: f64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            m: 32,
            d: 32,
            r_star: 8,
            samples: 2048,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTask {
    pub spec: TeacherSpec,
    pub w0: Matrix,
    /// Planted update, rank `r_star`, unit spectral norm.
    pub delta_star: Matrix,
    /// 0-based sample indices.
    pub train_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
    train: Dataset,
    eval: Dataset,
}

impl TeacherTask {
    pub fn generate(rng: &mut Rng, spec: TeacherSpec) -> Result<Self> {
        let TeacherSpec {
            m,
            d,
            r_star,
            samples,
            noise,
        } = spec;
        if m == 0 || d == 0 {
            return Err(Error::Config(alloc::format!(
                "teacher dims must be positive, got {m}x{d}"
            )));
        }
        if r_star > m.min(d) {
            return Err(Error::Config(alloc::format!(
                "r_star = {r_star} exceeds min(m, d) = {}",
                m.min(d)
            )));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "noise must be >= 0, got {noise}"
            )));
        }
        let (n_train, _) = split_sizes(samples)?;

        let w0 = Matrix::gaussian(rng, m, d, 1.0 / libm::sqrt(d as f64))?;
        let delta_star = if r_star == 0 {
            Matrix::zeros(m, d)
        } else {
            let u = Matrix::gaussian(rng, m, r_star, 1.0)?;
            let v = Matrix::gaussian(rng, r_star, d, 1.0)?;
            let raw = u.matmul(&v)?;
            let top = raw.singular_values()[0];
            raw.scale(1.0 / top)
        };
        let inputs = Matrix::gaussian(rng, d, samples, 1.0)?;
        let mut targets = w0.add(&delta_star)?.matmul(&inputs)?;
        if noise > 0.0 {
            let eps = Matrix::gaussian(rng, m, samples, noise)?;
            targets = targets.add(&eps)?;
        }
        let all = Dataset {
            inputs,
            targets: Targets::Regression(targets),
        };
        let train_idx: Vec<usize> = (0..n_train).collect();
        let eval_idx: Vec<usize> = (n_train..samples).collect();
        Ok(Self {
            spec,
            train: all.select(&train_idx),
            eval: all.select(&eval_idx),
            w0,
            delta_star,
            train_idx,
            eval_idx,
        })
    }
}

impl Task for TeacherTask {
    fn base_weight(&self) -> &Matrix {
        &self.w0
    }
    fn train_set(&self) -> &Dataset {
        &self.train
    }
    fn eval_set(&self) -> &Dataset {
        &self.eval
    }
    fn metric_kind(&self) -> MetricKind {
        MetricKind::Mse
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifySpec {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub samples: usize,
    /// Distance of each class center from the origin, in input space.
    pub separation: f64,
    pub spread: f64,
}

impl Default for ClassifySpec {
    fn default() -> Self {
        Self {
            input_dim: 8,
            feature_dim: 16,
            classes: 4,
            samples: 512,
            separation: 2.0,
            spread: 0.5,
        }
    }
}

/// Labels are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyTask {
    pub spec: ClassifySpec,
    /// Frozen `feature_dim x input_dim` projection, followed by `tanh`.
    pub projection: Matrix,
    /// Frozen head `classes x feature_dim`, the adapter's `W0`.
    pub head: Matrix,
    pub train_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
    train: Dataset,
    eval: Dataset,
}

impl ClassifyTask {
    pub fn generate(rng: &mut Rng, spec: ClassifySpec) -> Result<Self> {
        let ClassifySpec {
            input_dim,
            feature_dim,
            classes,
            samples,
            separation,
            spread,
        } = spec;
        if input_dim == 0 || feature_dim == 0 || classes < 2 {
            return Err(Error::Config(
                "classify task needs positive dims and >= 2 classes".into(),
            ));
        }
        if !(spread > 0.0) || !(separation >= 0.0) {
            return Err(Error::Config(
                "spread must be positive and separation non-negative".into(),
            ));
        }
        let (n_train, _) = split_sizes(samples)?;
        if n_train < classes {
            return Err(Error::Config(alloc::format!(
                "{n_train} training samples cannot cover {classes} classes"
            )));
        }
        let centers = Matrix::gaussian(rng, input_dim, classes, 1.0)?;
        let centers = Matrix::from_fn(input_dim, classes, |i, c| {
            let col_norm = libm::sqrt((0..input_dim).map(|k| centers.get(k, c).powi(2)).sum());
            separation * centers.get(i, c) / col_norm
        });
        // round-robin labels: every class appears in the leading train block
        let labels: Vec<usize> = (0..samples).map(|j| j % classes + 1).collect();
        let noise = Matrix::gaussian(rng, input_dim, samples, spread)?;
        let raw = Matrix::from_fn(input_dim, samples, |i, j| {
            centers.get(i, labels[j] - 1) + noise.get(i, j)
        });
        let projection = Matrix::gaussian(
            rng,
            feature_dim,
            input_dim,
            1.0 / libm::sqrt(input_dim as f64),
        )?;
        let features = projection.matmul(&raw)?.map(libm::tanh);
        let head = Matrix::gaussian(rng, classes, feature_dim, 0.01)?;
        let all = Dataset {
            inputs: features,
            targets: Targets::Classes(labels),
        };
        let train_idx: Vec<usize> = (0..n_train).collect();
        let eval_idx: Vec<usize> = (n_train..samples).collect();
        Ok(Self {
            spec,
            train: all.select(&train_idx),
            eval: all.select(&eval_idx),
            projection,
            head,
            train_idx,
            eval_idx,
        })
    }

    /// Frozen feature map applied to raw inputs (`input_dim x n`).
    pub fn features(&self, raw: &Matrix) -> Result<Matrix> {
        Ok(self.projection.matmul(raw)?.map(libm::tanh))
    }
}

impl Task for ClassifyTask {
    fn base_weight(&self) -> &Matrix {
        &self.head
    }
    fn train_set(&self) -> &Dataset {
        &self.train
    }
    fn eval_set(&self) -> &Dataset {
        &self.eval
    }
    fn metric_kind(&self) -> MetricKind {
        MetricKind::Accuracy
    }
}

/// Metric of a prediction against targets: MSE for regression, accuracy for classes.
pub fn score(pred: &Matrix, targets: &Targets) -> Result<f64> {
    match targets {
        Targets::Regression(y) => Ok(mse(pred, y)?.loss),
        Targets::Classes(l) => accuracy(pred, l),
    }
}

/// Eval-split metric of the adapter used at rank `b`.
pub fn eval_task(adapter: &DyLoraAdapter, task: &dyn Task, b: usize) -> Result<f64> {
    let eval = task.eval_set();
    score(&adapter.forward(&eval.inputs, b)?, &eval.targets)
}

/// Eval-split metric of a dense merged weight.
pub fn eval_merged(weights: &Matrix, task: &dyn Task) -> Result<f64> {
    let eval = task.eval_set();
    score(&weights.matmul(&eval.inputs)?, &eval.targets)
}
