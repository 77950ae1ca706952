//! Experiment orchestration: rank sweeps, rank-search cost accounting,
//! distribution/update-mode ablation, and loss-mode cost.
//!
//! Everything runs serially in `(arm, seed, rank)` order, so two runs with the
//! same inputs produce identical reports. Costs are counted in steps and
//! truncated passes, never wall-clock.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::adapter::{AdapterSpec, DyLoraAdapter};
use crate::error::{Error, Result};
use crate::sampler::RankDistributionKind;
use crate::tasks::{eval_task, MetricKind, Task};
use crate::trainer::{
    init_rng, train, train_static_lora, LossMode, StepCounters, TrainConfig, UpdateMode,
};

/// Tolerance for the DyLoRA-vs-static comparison at `r_max`.
pub const FULL_RANK_REL_TOL: f64 = 0.10;
/// Largest allowed relative size of the one tolerated monotonicity violation.
pub const MONOTONE_REL_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmKind {
    /// Trained over the adapter's whole rank range.
    Dynamic,
    /// Trained at a single rank, evaluated truncated at every rank below it.
    Static { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub kind: ArmKind,
    pub config: TrainConfig,
}

impl Arm {
    pub fn dynamic(name: &str, config: TrainConfig) -> Self {
        Self {
            name: name.to_string(),
            kind: ArmKind::Dynamic,
            config,
        }
    }

    pub fn static_lora(name: &str, rank: usize, config: TrainConfig) -> Self {
        Self {
            name: name.to_string(),
            kind: ArmKind::Static { rank },
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rank: usize,
    pub arm: String,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankStat {
    pub rank: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single seed.
    pub stddev: Option<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub kind: ArmKind,
    pub stats: Vec<RankStat>,
    /// One entry per successful seed.
    pub counters: Vec<StepCounters>,
    pub failure: Option<String>,
}

impl ArmSummary {
    pub fn stat(&self, rank: usize) -> Option<&RankStat> {
        self.stats.iter().find(|s| s.rank == rank)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub arms: Vec<ArmSummary>,
}

impl EvalReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    /// Soft comparison that did not hold.
    Warn,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Warn => "warn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    /// Hard checks fail a run; soft ones only warn.
    pub hard: bool,
    pub outcome: Outcome,
    pub detail: String,
}

impl Check {
    fn new(name: String, hard: bool, ok: bool, detail: String) -> Self {
        let outcome = match (ok, hard) {
            (true, _) => Outcome::Pass,
            (false, true) => Outcome::Fail,
            (false, false) => Outcome::Warn,
        };
        Self {
            name,
            hard,
            outcome,
            detail,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rank_stat(rank: usize, values: &[f64]) -> RankStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = (values.len() >= 2).then(|| {
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    });
    RankStat {
        rank,
        mean,
        stddev,
        median: median(values),
    }
}

fn train_arm(
    task: &dyn Task,
    spec: AdapterSpec,
    arm: &Arm,
    seed: u64,
    ranks: &[usize],
) -> Result<(StepCounters, Vec<f64>)> {
    let config = TrainConfig { seed, ..arm.config };
    let w0 = task.base_weight().clone();
    let trained = match arm.kind {
        ArmKind::Dynamic => {
            let adapter = DyLoraAdapter::init(&mut init_rng(seed), w0, spec)?;
            let out = train(adapter, task, &config)?;
            (out.counters, out.adapter)
        }
        ArmKind::Static { rank } => {
            let single = AdapterSpec {
                r_min: rank,
                r_max: rank,
                ..spec
            };
            let adapter = DyLoraAdapter::init(&mut init_rng(seed), w0, single)?;
            let out = train_static_lora(adapter, task, &config, rank)?;
            let floor = ranks.iter().copied().min().unwrap_or(rank).min(rank);
            (out.counters, out.adapter.with_r_min(floor)?)
        }
    };
    let (counters, adapter) = trained;
    let metrics = ranks
        .iter()
        .map(|&b| eval_task(&adapter, task, b))
        .collect::<Result<Vec<_>>>()?;
    Ok((counters, metrics))
}

/// Trains every arm once per seed and evaluates each checkpoint at every rank.
///
/// A failing arm is recorded in its summary and the sweep moves on.
pub fn rank_sweep(
    task: &dyn Task,
    spec: AdapterSpec,
    arms: &[Arm],
    ranks: &[usize],
    seeds: &[u64],
) -> Result<EvalReport> {
    if arms.is_empty() || ranks.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one arm, rank and seed".into(),
        ));
    }
    let budget = arms[0].config.steps;
    if let Some(a) = arms.iter().find(|a| a.config.steps != budget) {
        return Err(Error::Config(format!(
            "arm '{}' has {} steps but arm '{}' has {budget}; arms must share the step budget",
            a.name, a.config.steps, arms[0].name
        )));
    }
    for (i, a) in arms.iter().enumerate() {
        if arms[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::Config(format!("duplicate arm name '{}'", a.name)));
        }
    }
    for &b in ranks {
        if b < spec.r_min || b > spec.r_max {
            return Err(Error::Rank {
                b,
                r_min: spec.r_min,
                r_max: spec.r_max,
            });
        }
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut per_rank: Vec<Vec<f64>> = alloc::vec![Vec::new(); ranks.len()];
        let mut counters = Vec::new();
        let mut failure = None;
        let mut arm_rows = Vec::new();
        for &seed in seeds {
            match train_arm(task, spec, arm, seed, ranks) {
                Ok((c, metrics)) => {
                    counters.push(c);
                    for (i, (&rank, metric)) in ranks.iter().zip(metrics).enumerate() {
                        per_rank[i].push(metric);
                        arm_rows.push(SweepRow {
                            rank,
                            arm: arm.name.clone(),
                            seed,
                            metric,
                        });
                    }
                }
                Err(e) => {
                    failure = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        let stats = if failure.is_none() {
            rows.extend(arm_rows);
            ranks
                .iter()
                .zip(&per_rank)
                .map(|(&r, v)| rank_stat(r, v))
                .collect()
        } else {
            Vec::new()
        };
        summaries.push(ArmSummary {
            name: arm.name.clone(),
            kind: arm.kind,
            stats,
            counters,
            failure,
        });
    }
    Ok(EvalReport {
        metric: task.metric_kind(),
        ranks: ranks.to_vec(),
        seeds: seeds.to_vec(),
        rows,
        arms: summaries,
    })
}

fn rel_gap(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}

/// Hard checks comparing a dynamic arm against a static arm trained at `r_max`:
/// strictly better median below `r_max`, within [`FULL_RANK_REL_TOL`] at `r_max`.
pub fn headline_checks(report: &EvalReport, dynamic: &str, fixed: &str) -> Vec<Check> {
    let mut out = Vec::new();
    let (Some(dy), Some(st)) = (report.arm(dynamic), report.arm(fixed)) else {
        out.push(Check::new(
            "dynamic-vs-static".into(),
            true,
            false,
            format!("arms '{dynamic}' and '{fixed}' must both be present"),
        ));
        return out;
    };
    if let Some(f) = dy.failure.as_ref().or(st.failure.as_ref()) {
        out.push(Check::new(
            "dynamic-vs-static".into(),
            true,
            false,
            format!("arm failed: {f}"),
        ));
        return out;
    }
    let top = report.ranks.iter().copied().max().unwrap_or(0);
    let kind = report.metric;
    for &b in &report.ranks {
        let (Some(d), Some(s)) = (dy.stat(b), st.stat(b)) else {
            continue;
        };
        if b < top {
            out.push(Check::new(
                format!("dynamic-beats-truncated-static@{b}"),
                true,
                kind.strictly_better(d.median, s.median),
                format!("median {} {} vs {} {}", dynamic, d.median, fixed, s.median),
            ));
        } else {
            let gap = rel_gap(d.median, s.median);
            out.push(Check::new(
                format!("dynamic-matches-static@{b}"),
                true,
                gap <= FULL_RANK_REL_TOL,
                format!(
                    "median {} {} vs {} {}, relative gap {gap} (tol {FULL_RANK_REL_TOL})",
                    dynamic, d.median, fixed, s.median
                ),
            ));
        }
    }
    out
}

/// Medians should improve with rank, allowing one small adjacent violation.
pub fn monotonicity_check(report: &EvalReport, arm: &str) -> Check {
    let name = format!("monotone-in-rank:{arm}");
    let Some(summary) = report.arm(arm).filter(|a| a.failure.is_none()) else {
        return Check::new(name, true, false, format!("arm '{arm}' missing or failed"));
    };
    let mut stats: Vec<&RankStat> = summary.stats.iter().collect();
    stats.sort_by_key(|s| s.rank);
    let mut violations = Vec::new();
    for w in stats.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if !report.metric.at_least_as_good(hi.median, lo.median) {
            violations.push((hi.rank, rel_gap(hi.median, lo.median)));
        }
    }
    let ok = match violations.as_slice() {
        [] => true,
        [(_, gap)] => *gap <= MONOTONE_REL_TOL,
        _ => false,
    };
    Check::new(
        name,
        true,
        ok,
        format!("adjacent violations (rank, relative size): {violations:?}"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchArm {
    pub name: String,
    pub total_steps: u64,
    pub total_passes: u64,
    pub ranks_trained: Vec<usize>,
    /// `(rank, metric)` for every candidate.
    pub metrics: Vec<(usize, f64)>,
    pub best_rank: usize,
    pub best_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchCostLedger {
    pub metric: MetricKind,
    pub candidates: Vec<usize>,
    pub per_run_steps: usize,
    pub search: SearchArm,
    pub dynamic: SearchArm,
}

impl SearchCostLedger {
    /// `(search steps, dynamic steps)`; the ratio is the candidate count.
    pub fn steps_ratio(&self) -> (u64, u64) {
        (self.search.total_steps, self.dynamic.total_steps)
    }

    pub fn steps_ratio_f64(&self) -> f64 {
        self.search.total_steps as f64 / self.dynamic.total_steps as f64
    }
}

fn best_of(kind: MetricKind, metrics: &[(usize, f64)]) -> (usize, f64) {
    let mut best = metrics[0];
    for &(r, m) in &metrics[1..] {
        if kind.strictly_better(m, best.1) {
            best = (r, m);
        }
    }
    best
}

/// One static run per candidate rank versus a single dynamic run over the
/// candidate range, each with `per_run_steps`.
pub fn search_simulation(
    task: &dyn Task,
    spec: AdapterSpec,
    candidates: &[usize],
    per_run_steps: usize,
    config: &TrainConfig,
) -> Result<SearchCostLedger> {
    if candidates.is_empty() {
        return Err(Error::Config(
            "rank search needs at least one candidate".into(),
        ));
    }
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let config = TrainConfig {
        steps: per_run_steps,
        ..*config
    };
    let kind = task.metric_kind();
    let w0 = task.base_weight();

    let mut search_metrics = Vec::with_capacity(candidates.len());
    let mut steps = 0;
    let mut passes = 0;
    for &r in &candidates {
        let single = AdapterSpec {
            r_min: r,
            r_max: r,
            ..spec
        };
        let adapter = DyLoraAdapter::init(&mut init_rng(config.seed), w0.clone(), single)?;
        let out = train_static_lora(adapter, task, &config, r)?;
        steps += out.counters.steps_run;
        passes += out.counters.truncated_passes;
        search_metrics.push((r, eval_task(&out.adapter, task, r)?));
    }
    let (best_rank, best_metric) = best_of(kind, &search_metrics);
    let search = SearchArm {
        name: "lora-search".into(),
        total_steps: steps,
        total_passes: passes,
        ranks_trained: candidates.clone(),
        metrics: search_metrics,
        best_rank,
        best_metric,
    };

    let range = AdapterSpec {
        r_min: candidates[0],
        r_max: *candidates.last().unwrap(),
        ..spec
    };
    let adapter = DyLoraAdapter::init(&mut init_rng(config.seed), w0.clone(), range)?;
    let out = train(adapter, task, &config)?;
    let dyn_metrics = candidates
        .iter()
        .map(|&r| Ok((r, eval_task(&out.adapter, task, r)?)))
        .collect::<Result<Vec<_>>>()?;
    let (best_rank, best_metric) = best_of(kind, &dyn_metrics);
    let dynamic = SearchArm {
        name: "dylora".into(),
        total_steps: out.counters.steps_run,
        total_passes: out.counters.truncated_passes,
        ranks_trained: alloc::vec![range.r_max],
        metrics: dyn_metrics,
        best_rank,
        best_metric,
    };
    Ok(SearchCostLedger {
        metric: kind,
        candidates,
        per_run_steps,
        search,
        dynamic,
    })
}

pub fn distribution_name(kind: RankDistributionKind) -> String {
    match kind {
        RankDistributionKind::Uniform => "uniform".into(),
        RankDistributionKind::Geometric { p } => format!("geometric({p})"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub report: EvalReport,
    pub flags: Vec<Check>,
}

/// Arm name used by [`ablation`] for a distribution/mode pair.
pub fn ablation_arm_name(dist: RankDistributionKind, mode: UpdateMode) -> String {
    format!("{}-{}", distribution_name(dist), mode.name())
}

/// Every distribution crossed with every update mode, evaluated at `r_min`
/// and `r_max`, with warn-only tendency flags.
pub fn ablation(
    task: &dyn Task,
    spec: AdapterSpec,
    base: &TrainConfig,
    distributions: &[RankDistributionKind],
    modes: &[UpdateMode],
    seeds: &[u64],
) -> Result<AblationReport> {
    if distributions.is_empty() || modes.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one distribution and one mode".into(),
        ));
    }
    let mut arms = Vec::new();
    for &dist in distributions {
        for &mode in modes {
            let config = TrainConfig {
                distribution: dist,
                update_mode: mode,
                ..*base
            };
            arms.push(Arm::dynamic(&ablation_arm_name(dist, mode), config));
        }
    }
    let mut ranks = alloc::vec![spec.r_min];
    if spec.r_max != spec.r_min {
        ranks.push(spec.r_max);
    }
    let report = rank_sweep(task, spec, &arms, &ranks, seeds)?;
    let kind = report.metric;
    let median_at = |name: &str, rank: usize| {
        report
            .arm(name)
            .and_then(|a| a.stat(rank))
            .map(|s| s.median)
    };

    let mut flags = Vec::new();
    let uniform = distributions
        .iter()
        .find(|d| matches!(d, RankDistributionKind::Uniform));
    let geometric = distributions
        .iter()
        .find(|d| matches!(d, RankDistributionKind::Geometric { .. }));
    if let (Some(&u), Some(&g)) = (uniform, geometric) {
        for &mode in modes {
            let (gn, un) = (ablation_arm_name(g, mode), ablation_arm_name(u, mode));
            if let (Some(gm), Some(um)) = (median_at(&gn, spec.r_min), median_at(&un, spec.r_min)) {
                flags.push(Check::new(
                    format!("geometric-favors-low-rank:{}@{}", mode.name(), spec.r_min),
                    false,
                    kind.at_least_as_good(gm, um),
                    format!("median {gn} {gm} vs {un} {um}"),
                ));
            }
        }
    }
    if modes.contains(&UpdateMode::Frozen) && modes.contains(&UpdateMode::Cascade) {
        for &dist in distributions {
            let cn = ablation_arm_name(dist, UpdateMode::Cascade);
            let fname = ablation_arm_name(dist, UpdateMode::Frozen);
            if let (Some(cm), Some(fm)) =
                (median_at(&cn, spec.r_max), median_at(&fname, spec.r_max))
            {
                flags.push(Check::new(
                    format!(
                        "cascade-at-least-frozen:{}@{}",
                        distribution_name(dist),
                        spec.r_max
                    ),
                    false,
                    kind.at_least_as_good(cm, fm),
                    format!("median {cn} {cm} vs {fname} {fm}"),
                ));
            }
        }
    }
    Ok(AblationReport { report, flags })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossModeResult {
    pub mode: LossMode,
    pub counters: StepCounters,
    /// Eval metric at each rank in the range.
    pub metrics: Vec<(usize, f64)>,
    pub average_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossModeCost {
    pub individual: LossModeResult,
    pub summation: LossModeResult,
}

impl LossModeCost {
    /// `(summation passes, individual passes)`.
    pub fn pass_ratio(&self) -> (u64, u64) {
        (
            self.summation.counters.truncated_passes,
            self.individual.counters.truncated_passes,
        )
    }
}

/// Trains the same adapter under both loss modes with one step budget.
pub fn loss_mode_cost(
    task: &dyn Task,
    spec: AdapterSpec,
    config: &TrainConfig,
) -> Result<LossModeCost> {
    let run = |mode: LossMode| -> Result<LossModeResult> {
        let cfg = TrainConfig {
            loss_mode: mode,
            ..*config
        };
        let adapter =
            DyLoraAdapter::init(&mut init_rng(cfg.seed), task.base_weight().clone(), spec)?;
        let out = train(adapter, task, &cfg)?;
        let metrics = (spec.r_min..=spec.r_max)
            .map(|b| Ok((b, eval_task(&out.adapter, task, b)?)))
            .collect::<Result<Vec<_>>>()?;
        let average_metric = metrics.iter().map(|m| m.1).sum::<f64>() / metrics.len() as f64;
        Ok(LossModeResult {
            mode,
            counters: out.counters,
            metrics,
            average_metric,
        })
    };
    Ok(LossModeCost {
        individual: run(LossMode::Individual)?,
        summation: run(LossMode::Summation)?,
    })
}
