//! Experiment runner for the `rcgrf` training engine.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use commands::{cmd_compare, cmd_drift, cmd_eval, cmd_sweep, cmd_synth, cmd_train};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
