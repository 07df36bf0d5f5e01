//! Seq2Seq spatio-temporal forecasting with three decoder-input regimes:
//! teacher forcing, scheduled sampling, and temporal progressive growing
//! (TPG) sampling, where a half-timescale model trained on odd/even
//! subsequences supplies decoder inputs while the full model is annealed
//! toward its own predictions.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
pub use rng::RngState;
pub use tensor::SeqTensor;
