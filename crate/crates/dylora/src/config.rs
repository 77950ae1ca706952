//! TOML experiment configuration.
//!
//! Only `adapter.r_max` is required; every other field has a default. See
//! the README for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dylora_core::bench::{Arm, ArmKind};
use dylora_core::{
    AdapterSpec, ClassifySpec, ClassifyTask, LossMode, OptimizerKind, RankDistributionKind, Rng,
    Task, TeacherSpec, TeacherTask, TrainConfig, UpdateMode,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: TaskConfig,
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskConfig {
    Teacher {
        #[serde(default = "default_task_seed")]
        seed: u64,
        #[serde(default = "default_dim")]
        m: usize,
        #[serde(default = "default_dim")]
        d: usize,
        #[serde(default = "default_r_star")]
        r_star: usize,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Classify {
        #[serde(default = "default_task_seed")]
        seed: u64,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        #[serde(default = "default_feature_dim")]
        feature_dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_classify_samples")]
        samples: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_task_seed() -> u64 {
    7
}
fn default_dim() -> usize {
    TeacherSpec::default().m
}
fn default_r_star() -> usize {
    TeacherSpec::default().r_star
}
fn default_samples() -> usize {
    TeacherSpec::default().samples
}
fn default_noise() -> f64 {
    TeacherSpec::default().noise
}
fn default_input_dim() -> usize {
    ClassifySpec::default().input_dim
}
fn default_feature_dim() -> usize {
    ClassifySpec::default().feature_dim
}
fn default_classes() -> usize {
    ClassifySpec::default().classes
}
fn default_classify_samples() -> usize {
    ClassifySpec::default().samples
}
fn default_separation() -> f64 {
    ClassifySpec::default().separation
}
fn default_spread() -> f64 {
    ClassifySpec::default().spread
}

impl Default for TaskConfig {
    fn default() -> Self {
        let s = TeacherSpec::default();
        TaskConfig::Teacher {
            seed: default_task_seed(),
            m: s.m,
            d: s.d,
            r_star: s.r_star,
            samples: s.samples,
            noise: s.noise,
        }
    }
}

/// A generated task, ready for training and evaluation.
#[derive(Debug, Clone)]
pub enum BuiltTask {
    Teacher(TeacherTask),
    Classify(ClassifyTask),
}

impl BuiltTask {
    pub fn as_task(&self) -> &dyn Task {
        match self {
            BuiltTask::Teacher(t) => t,
            BuiltTask::Classify(t) => t,
        }
    }
}

impl TaskConfig {
    /// `(m, d)` of the base map the adapter wraps.
    pub fn base_dims(&self) -> (usize, usize) {
        match *self {
            TaskConfig::Teacher { m, d, .. } => (m, d),
            TaskConfig::Classify {
                classes,
                feature_dim,
                ..
            } => (classes, feature_dim),
        }
    }

    pub fn build(&self) -> Result<BuiltTask> {
        self.generate()
            .map_err(|e| CliError::Config(format!("task: {e}")))
    }

    fn generate(&self) -> dylora_core::Result<BuiltTask> {
        Ok(match *self {
            TaskConfig::Teacher {
                seed,
                m,
                d,
                r_star,
                samples,
                noise,
            } => BuiltTask::Teacher(TeacherTask::generate(
                &mut Rng::new(seed),
                TeacherSpec {
                    m,
                    d,
                    r_star,
                    samples,
                    noise,
                },
            )?),
            TaskConfig::Classify {
                seed,
                input_dim,
                feature_dim,
                classes,
                samples,
                separation,
                spread,
            } => BuiltTask::Classify(ClassifyTask::generate(
                &mut Rng::new(seed),
                ClassifySpec {
                    input_dim,
                    feature_dim,
                    classes,
                    samples,
                    separation,
                    spread,
                },
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    #[serde(default = "one")]
    pub r_min: usize,
    pub r_max: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn one() -> usize {
    1
}
fn default_alpha() -> f64 {
    dylora_core::adapter::DEFAULT_ALPHA
}
fn default_sigma() -> f64 {
    dylora_core::adapter::DEFAULT_SIGMA
}

impl AdapterConfig {
    pub fn spec(&self) -> AdapterSpec {
        AdapterSpec {
            r_min: self.r_min,
            r_max: self.r_max,
            alpha: self.alpha,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adamw {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "eps")]
        eps: f64,
        #[serde(default = "weight_decay")]
        weight_decay: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}
fn weight_decay() -> f64 {
    0.1
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adamw {
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
            weight_decay: weight_decay(),
        }
    }
}

impl From<OptimizerConfig> for OptimizerKind {
    fn from(c: OptimizerConfig) -> Self {
        match c {
            OptimizerConfig::Sgd => OptimizerKind::Sgd,
            OptimizerConfig::Adamw {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionConfig {
    #[default]
    Uniform,
    Geometric {
        #[serde(default = "geometric_p")]
        p: f64,
    },
}

fn geometric_p() -> f64 {
    0.15
}

impl From<DistributionConfig> for RankDistributionKind {
    fn from(c: DistributionConfig) -> Self {
        match c {
            DistributionConfig::Uniform => RankDistributionKind::Uniform,
            DistributionConfig::Geometric { p } => RankDistributionKind::Geometric { p },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateModeConfig {
    Frozen,
    Cascade,
}

impl From<UpdateModeConfig> for UpdateMode {
    fn from(c: UpdateModeConfig) -> Self {
        match c {
            UpdateModeConfig::Frozen => UpdateMode::Frozen,
            UpdateModeConfig::Cascade => UpdateMode::Cascade,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossModeConfig {
    Individual,
    Summation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_update_mode")]
    pub update_mode: UpdateModeConfig,
    #[serde(default = "default_loss_mode")]
    pub loss_mode: LossModeConfig,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "default_train_seed")]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub distribution: DistributionConfig,
}

fn default_update_mode() -> UpdateModeConfig {
    UpdateModeConfig::Cascade
}
fn default_loss_mode() -> LossModeConfig {
    LossModeConfig::Individual
}
fn default_steps() -> usize {
    TrainConfig::default().steps
}
fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_lr() -> f64 {
    TrainConfig::default().learning_rate
}
fn default_train_seed() -> u64 {
    TrainConfig::default().seed
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            update_mode: default_update_mode(),
            loss_mode: default_loss_mode(),
            steps: default_steps(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            warmup_steps: 0,
            seed: default_train_seed(),
            optimizer: OptimizerConfig::default(),
            distribution: DistributionConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            update_mode: self.update_mode.into(),
            loss_mode: match self.loss_mode {
                LossModeConfig::Individual => LossMode::Individual,
                LossModeConfig::Summation => LossMode::Summation,
            },
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            optimizer: self.optimizer.into(),
            seed: self.seed,
            distribution: self.distribution.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmKindConfig {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub kind: ArmKindConfig,
    /// Training rank of a static arm; defaults to `adapter.r_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Ranks to evaluate in a sweep; empty means `r_min..=r_max`.
    #[serde(default)]
    pub ranks: Vec<usize>,
    /// Empty means one dynamic arm plus a static arm at `r_max`.
    #[serde(default)]
    pub arms: Vec<ArmConfig>,
    /// Rank-search candidates; empty means `r_min..=r_max`.
    #[serde(default)]
    pub candidates: Vec<usize>,
    /// Steps per search run; defaults to `train.steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_run_steps: Option<usize>,
    #[serde(default = "default_distributions")]
    pub distributions: Vec<DistributionConfig>,
    #[serde(default = "default_modes")]
    pub modes: Vec<UpdateModeConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![10, 42, 4242, 1010, 7]
}
fn default_distributions() -> Vec<DistributionConfig> {
    vec![
        DistributionConfig::Uniform,
        DistributionConfig::Geometric { p: geometric_p() },
    ]
}
fn default_modes() -> Vec<UpdateModeConfig> {
    vec![UpdateModeConfig::Frozen, UpdateModeConfig::Cascade]
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            ranks: Vec::new(),
            arms: Vec::new(),
            candidates: Vec::new(),
            per_run_steps: None,
            distributions: default_distributions(),
            modes: default_modes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Cross-field checks, reported with the offending field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let (m, d) = self.task.base_dims();
        let a = &self.adapter;
        if a.r_min == 0 {
            return bad("adapter.r_min must be >= 1".into());
        }
        if a.r_min > a.r_max {
            return bad(format!(
                "adapter.r_min = {} exceeds adapter.r_max = {}",
                a.r_min, a.r_max
            ));
        }
        if a.r_max > m.min(d) {
            return bad(format!(
                "adapter.r_max = {} exceeds min(m, d) = {} of the task's base map",
                a.r_max,
                m.min(d)
            ));
        }
        if !(a.alpha > 0.0) {
            return bad(format!("adapter.alpha must be positive, got {}", a.alpha));
        }
        if !(a.sigma > 0.0) {
            return bad(format!("adapter.sigma must be positive, got {}", a.sigma));
        }
        if let TaskConfig::Teacher { r_star, m, d, .. } = self.task {
            if r_star > m.min(d) {
                return bad(format!(
                    "task.r_star = {r_star} exceeds min(task.m, task.d) = {}",
                    m.min(d)
                ));
            }
        }
        self.train
            .to_config()
            .validate()
            .or_else(|e| bad(format!("train: {e}")))?;
        let b = &self.bench;
        if b.seeds.is_empty() {
            return bad("bench.seeds must not be empty".into());
        }
        for &r in &b.ranks {
            if r < a.r_min || r > a.r_max {
                return bad(format!(
                    "bench.ranks entry {r} outside [adapter.r_min, adapter.r_max] = [{}, {}]",
                    a.r_min, a.r_max
                ));
            }
        }
        for arm in &b.arms {
            if let Some(r) = arm.rank {
                if arm.kind == ArmKindConfig::Dynamic {
                    return bad(format!(
                        "bench.arms '{}': rank is only valid for static arms",
                        arm.name
                    ));
                }
                if r < a.r_min || r > a.r_max {
                    return bad(format!(
                        "bench.arms '{}': rank {r} outside [{}, {}]",
                        arm.name, a.r_min, a.r_max
                    ));
                }
            }
        }
        for &c in &b.candidates {
            if c == 0 || c > m.min(d) {
                return bad(format!(
                    "bench.candidates entry {c} outside [1, min(m, d) = {}]",
                    m.min(d)
                ));
            }
        }
        if b.per_run_steps == Some(0) {
            return bad("bench.per_run_steps must be >= 1".into());
        }
        for dist in &b.distributions {
            if let DistributionConfig::Geometric { p } = dist {
                if !(*p > 0.0 && *p < 1.0) {
                    return bad(format!(
                        "bench.distributions: geometric p must lie in (0, 1), got {p}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical TOML of the resolved config (defaults filled in).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Applies a `--seed` override: it becomes the training seed and the
    /// only bench seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.bench.seeds = vec![seed];
        self
    }

    pub fn sweep_ranks(&self) -> Vec<usize> {
        if self.bench.ranks.is_empty() {
            (self.adapter.r_min..=self.adapter.r_max).collect()
        } else {
            self.bench.ranks.clone()
        }
    }

    pub fn search_candidates(&self) -> Vec<usize> {
        if self.bench.candidates.is_empty() {
            (self.adapter.r_min..=self.adapter.r_max).collect()
        } else {
            self.bench.candidates.clone()
        }
    }

    pub fn arms(&self) -> Vec<Arm> {
        let cfg = self.train.to_config();
        if self.bench.arms.is_empty() {
            let r = self.adapter.r_max;
            return vec![
                Arm::dynamic("dylora", cfg),
                Arm::static_lora(&format!("lora-r{r}"), r, cfg),
            ];
        }
        self.bench
            .arms
            .iter()
            .map(|a| Arm {
                name: a.name.clone(),
                kind: match a.kind {
                    ArmKindConfig::Dynamic => ArmKind::Dynamic,
                    ArmKindConfig::Static => ArmKind::Static {
                        rank: a.rank.unwrap_or(self.adapter.r_max),
                    },
                },
                config: cfg,
            })
            .collect()
    }
}
