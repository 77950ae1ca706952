//! Rank-sampled training of a [`DyLoraAdapter`].
//!
//! Each step draws a minibatch and either samples one rank `b`
//! ([`LossMode::Individual`]) or visits every rank in the support weighted
//! by its probability ([`LossMode::Summation`]). Gradients then go to the
//! factors according to [`UpdateMode`]:
//!
//! * `Frozen` touches only row `b` of `W_dw` and column `b` of `W_up`.
//! * `Cascade` touches rows/columns `1..=b`.
//!
//! Random draws come from three independent streams of the configured
//! seed (init, batches, ranks) so the batch sequence does not depend on the
//! loss mode.

use alloc::vec::Vec;

use crate::adapter::{AdapterGrads, DyLoraAdapter};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optimizer::{OptimizerKind, OptimizerState};
use crate::rng::Rng;
use crate::sampler::{RankDistribution, RankDistributionKind};
use crate::tasks::{Dataset, Task};

/// Stream used for adapter initialization by callers that derive it from the training seed.
pub const INIT_STREAM: u64 = 0;
pub const BATCH_STREAM: u64 = 1;
pub const RANK_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Frozen,
    Cascade,
}

impl UpdateMode {
    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::Frozen => "frozen",
            UpdateMode::Cascade => "cascade",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Individual,
    Summation,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Individual => "individual",
            LossMode::Summation => "summation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub update_mode: UpdateMode,
    pub loss_mode: LossMode,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear warmup length in steps; 0 disables it.
    pub warmup_steps: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub distribution: RankDistributionKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            update_mode: UpdateMode::Cascade,
            loss_mode: LossMode::Individual,
            steps: 3000,
            batch_size: 32,
            learning_rate: 4e-4,
            warmup_steps: 0,
            optimizer: OptimizerKind::adamw_default(),
            seed: 42,
            distribution: RankDistributionKind::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if let OptimizerKind::AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.optimizer
        {
            let unit = |v: f64| (0.0..1.0).contains(&v);
            if !unit(beta1) || !unit(beta2) || !(eps > 0.0) || !(weight_decay >= 0.0) {
                return Err(Error::Config(alloc::format!(
                    "adamw settings out of range: beta1={beta1} beta2={beta2} eps={eps} weight_decay={weight_decay}"
                )));
            }
        }
        if let RankDistributionKind::Geometric { p } = self.distribution {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(alloc::format!(
                    "geometric p must lie in (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub steps_run: u64,
    /// Forward+backward passes through a truncated adapter.
    pub truncated_passes: u64,
    pub param_scalar_updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// 1-based.
    pub step: usize,
    /// Sampled rank; `None` when every rank was visited.
    pub rank: Option<usize>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub adapter: DyLoraAdapter,
    pub counters: StepCounters,
    pub trace: Vec<TraceRecord>,
}

/// Loss of the adapter truncated to rank `b` on `batch`, with factor gradients.
pub fn dynamic_loss(
    adapter: &DyLoraAdapter,
    batch: &Dataset,
    b: usize,
) -> Result<(f64, AdapterGrads)> {
    let pred = adapter.forward(&batch.inputs, b)?;
    let lg = batch.targets.loss(&pred)?;
    let grads = adapter.backward(&batch.inputs, b, &lg.grad)?;
    Ok((lg.loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummationLoss {
    /// `Σ_b p(b) L_b`
    pub loss: f64,
    /// `Σ_b p(b) ∇L_b`, padded to full `r_max` factors.
    pub grads: AdapterGrads,
    /// Unweighted per-rank results, in increasing rank order.
    pub per_rank: Vec<(usize, f64, AdapterGrads)>,
}

/// Probability-weighted loss over every rank in the support of `dist`.
pub fn summation_loss(
    adapter: &DyLoraAdapter,
    batch: &Dataset,
    dist: &RankDistribution,
) -> Result<SummationLoss> {
    let (m, d, r) = (adapter.out_dim(), adapter.in_dim(), adapter.r_max());
    let mut loss = 0.0;
    let mut acc = AdapterGrads::zeros(m, d, r);
    let mut per_rank = Vec::with_capacity(dist.len());
    for (b, p) in dist.iter() {
        let (l, g) = dynamic_loss(adapter, batch, b)?;
        loss += p * l;
        {
            let up = acc.g_up.as_mut_slice();
            for i in 0..m {
                for k in 0..b {
                    up[i * r + k] += p * g.g_up.get(i, k);
                }
            }
            let dw = acc.g_dw.as_mut_slice();
            for k in 0..b {
                for j in 0..d {
                    dw[k * d + j] += p * g.g_dw.get(k, j);
                }
            }
        }
        per_rank.push((b, l, g));
    }
    Ok(SummationLoss {
        loss,
        grads: acc,
        per_rank,
    })
}

fn check_grads(adapter: &DyLoraAdapter, grads: &AdapterGrads, b: usize) -> Result<()> {
    adapter.check_rank(b)?;
    let want_up = (adapter.out_dim(), b);
    let want_dw = (b, adapter.in_dim());
    if grads.b != b || grads.g_up.shape() != want_up || grads.g_dw.shape() != want_dw {
        return Err(Error::Contract(alloc::format!(
            "gradients for rank {} ({}x{}, {}x{}) applied at rank {b}",
            grads.b,
            grads.g_up.rows(),
            grads.g_up.cols(),
            grads.g_dw.rows(),
            grads.g_dw.cols()
        )));
    }
    Ok(())
}

fn step_slice_from(
    adapter: &mut DyLoraAdapter,
    state: &mut OptimizerState,
    grads: &AdapterGrads,
    k: usize,
    weight: f64,
    lr: f64,
) {
    let row: Vec<f64> = grads.g_dw.row(k - 1).iter().map(|g| weight * g).collect();
    let col: Vec<f64> = (0..grads.g_up.rows())
        .map(|i| weight * grads.g_up.get(i, k - 1))
        .collect();
    state.step_slice(adapter, k, &row, &col, lr);
}

/// Updates only row `b` of `W_dw` and column `b` of `W_up`.
pub fn apply_update_frozen(
    adapter: &mut DyLoraAdapter,
    grads: &AdapterGrads,
    b: usize,
    lr: f64,
    state: &mut OptimizerState,
) -> Result<u64> {
    check_grads(adapter, grads, b)?;
    step_slice_from(adapter, state, grads, b, 1.0, lr);
    Ok((adapter.out_dim() + adapter.in_dim()) as u64)
}

/// Updates rows `1..=b` of `W_dw` and columns `1..=b` of `W_up`.
pub fn apply_update_cascade(
    adapter: &mut DyLoraAdapter,
    grads: &AdapterGrads,
    b: usize,
    lr: f64,
    state: &mut OptimizerState,
) -> Result<u64> {
    check_grads(adapter, grads, b)?;
    for k in 1..=b {
        step_slice_from(adapter, state, grads, k, 1.0, lr);
    }
    Ok((b * (adapter.out_dim() + adapter.in_dim())) as u64)
}

fn sample_batch(rng: &mut Rng, data: &Dataset, size: usize, idx: &mut Vec<usize>) -> Dataset {
    idx.clear();
    idx.extend((0..size).map(|_| rng.index(data.len())));
    data.select(idx)
}

/// Trains `adapter` on the task's training split.
pub fn train(
    adapter: DyLoraAdapter,
    task: &dyn Task,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = task.train_set();
    if train_set.is_empty() {
        return Err(Error::Config("task has an empty training split".into()));
    }
    if train_set.inputs.rows() != adapter.in_dim() {
        return Err(Error::Config(alloc::format!(
            "task inputs have {} features but the adapter expects {}",
            train_set.inputs.rows(),
            adapter.in_dim()
        )));
    }
    let dist = RankDistribution::new(config.distribution, adapter.r_min(), adapter.r_max())?;
    let mut adapter = adapter;
    let mut state = OptimizerState::new(config.optimizer, &adapter);
    let mut batch_rng = Rng::with_stream(config.seed, BATCH_STREAM);
    let mut rank_rng = Rng::with_stream(config.seed, RANK_STREAM);
    let mut counters = StepCounters::default();
    let mut trace = Vec::with_capacity(config.steps);
    let mut idx = Vec::with_capacity(config.batch_size);

    for step in 1..=config.steps {
        let batch = sample_batch(&mut batch_rng, train_set, config.batch_size, &mut idx);
        let lr = config.lr_at(step);
        let (loss, rank, updated) = match config.loss_mode {
            LossMode::Individual => {
                let b = dist.sample(&mut rank_rng);
                let (loss, grads) = dynamic_loss(&adapter, &batch, b)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { step });
                }
                counters.truncated_passes += 1;
                let updated = match config.update_mode {
                    UpdateMode::Frozen => {
                        apply_update_frozen(&mut adapter, &grads, b, lr, &mut state)?
                    }
                    UpdateMode::Cascade => {
                        apply_update_cascade(&mut adapter, &grads, b, lr, &mut state)?
                    }
                };
                (loss, Some(b), updated)
            }
            LossMode::Summation => {
                let sum = summation_loss(&adapter, &batch, &dist)?;
                if !sum.loss.is_finite() {
                    return Err(Error::Divergence { step });
                }
                counters.truncated_passes += sum.per_rank.len() as u64;
                let updated = match config.update_mode {
                    // each rank's own slice, driven by that rank's weighted loss
                    UpdateMode::Frozen => {
                        for (b, _, g) in &sum.per_rank {
                            step_slice_from(&mut adapter, &mut state, g, *b, dist.prob(*b), lr);
                        }
                        (sum.per_rank.len() * (adapter.out_dim() + adapter.in_dim())) as u64
                    }
                    UpdateMode::Cascade => {
                        let r = adapter.r_max();
                        apply_update_cascade(&mut adapter, &sum.grads, r, lr, &mut state)?
                    }
                };
                let single = (dist.len() == 1).then_some(dist.r_min());
                (sum.loss, single, updated)
            }
        };
        counters.steps_run += 1;
        counters.param_scalar_updates += updated;
        trace.push(TraceRecord { step, rank, loss });
    }
    Ok(TrainOutcome {
        adapter,
        counters,
        trace,
    })
}

/// Single-rank LoRA baseline: point mass at `rank`, cascade updates.
pub fn train_static_lora(
    adapter: DyLoraAdapter,
    task: &dyn Task,
    config: &TrainConfig,
    rank: usize,
) -> Result<TrainOutcome> {
    if adapter.r_min() != rank || adapter.r_max() != rank {
        return Err(Error::Config(alloc::format!(
            "static LoRA at rank {rank} needs an adapter with r_min = r_max = {rank}, got [{}, {}]",
            adapter.r_min(),
            adapter.r_max()
        )));
    }
    let config = TrainConfig {
        update_mode: UpdateMode::Cascade,
        loss_mode: LossMode::Individual,
        distribution: RankDistributionKind::Uniform,
        ..*config
    };
    train(adapter, task, &config)
}

/// Helper for callers that initialize from the training seed.
pub fn init_rng(seed: u64) -> Rng {
    Rng::with_stream(seed, INIT_STREAM)
}

/// Frozen copy of factors, for isolation checks.
pub fn snapshot(adapter: &DyLoraAdapter) -> (Matrix, Matrix) {
    (adapter.w_up().clone(), adapter.w_dw().clone())
}
