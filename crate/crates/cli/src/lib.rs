//! Configuration parsing and subcommands behind the `tpgf` binary.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, Family};
pub use error::CliError;
