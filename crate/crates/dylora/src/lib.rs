//! File formats, configuration and command implementations for the `dylora`
//! binary. The numerics live in `dylora-core`.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use error::{CliError, Result};
