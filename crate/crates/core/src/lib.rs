//! Dynamic low-rank adapters.
//!
//! A [`DyLoraAdapter`] wraps a frozen weight `W0` with factors `W_up` and
//! `W_dw` that can be truncated to any rank `b` in `[r_min, r_max]`. Training
//! ([`trainer::train`]) samples `b` every step so the leading rows/columns
//! carry the most information, and a single checkpoint serves every rank.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, configuration
//! and the command-line front end live in the `dylora` crate.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adapter;
pub mod bench;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod optimizer;
pub mod rng;
pub mod sampler;
pub mod tasks;
pub mod trainer;

pub use adapter::{AdapterGrads, AdapterSpec, DyLoraAdapter};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use optimizer::OptimizerKind;
pub use rng::{Rng, RngState};
pub use sampler::{RankDistribution, RankDistributionKind};
pub use tasks::{ClassifySpec, ClassifyTask, Dataset, MetricKind, Task, TeacherSpec, TeacherTask};
pub use trainer::{LossMode, StepCounters, TraceRecord, TrainConfig, TrainOutcome, UpdateMode};
