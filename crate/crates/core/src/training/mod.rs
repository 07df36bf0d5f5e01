//! Loss, optimizer, backpropagation through time and the training drivers.

mod adam;
mod bptt;
mod driver;
mod loss;

pub use adam::{adam_step, clip_gradients, global_norm, AdamMoments};
pub use bptt::bptt;
pub use driver::{
    evaluate, evaluate_predictions, half_timescale_dataset, m1_forecast, sample_gradient, train_scheduled, train_tpg,
    Evaluation, M1Forecast, ScheduledOutcome, TpgOutcome,
};
pub use loss::{composite_loss, composite_loss_grad};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Seq2SeqParams;
use crate::rng::RngState;
use crate::sampling::ScheduleConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    /// Decay speed for the half-timescale model's own scheduled sampling
    /// (TPG stage 1); `None` reuses `schedule.lambda`.
    pub stage1_lambda: Option<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Total optimizer steps; for TPG this includes `stage1_iters`.
    pub total_iters: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub warm_start_m2: bool,
    pub seed: u64,
    pub hidden: usize,
    pub init_scale: f64,
    /// Validation cadence in iterations.
    pub val_every: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::teacher_forcing(),
            stage1_lambda: None,
            learning_rate: 1e-2,
            batch_size: 32,
            total_iters: 2000,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            warm_start_m2: true,
            seed: 1,
            hidden: 32,
            init_scale: 0.1,
            val_every: 50,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps_adam > 0.0) || !(self.clip_norm > 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::config("eps_adam, clip_norm and init_scale must be positive"));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.val_every == 0 {
            return Err(Error::config("batch_size, hidden and val_every must be at least 1"));
        }
        if let Some(l) = self.stage1_lambda {
            if !(l > 0.0) {
                return Err(Error::config(format!("stage1_lambda must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    M1,
    Transition,
    M2Solo,
}

/// Mutable optimizer-side state of one model.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Global batch counter `i`.
    pub iter: u64,
    pub moments: AdamMoments,
    pub stage: Stage,
    pub rng: RngState,
}

impl TrainState {
    pub fn new(params: &Seq2SeqParams, stage: Stage, seed: u64) -> Self {
        Self {
            iter: 0,
            moments: AdamMoments::new(params),
            stage,
            rng: RngState::new(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub split: Split,
    pub metric: String,
    pub value: f64,
}

impl MetricsRow {
    pub fn new(iter: u64, split: Split, metric: impl Into<String>, value: f64) -> Self {
        Self {
            iter,
            split,
            metric: metric.into(),
            value,
        }
    }
}

/// Render rows as `iter,split,metric,value` CSV text (with header). Values
/// are printed with 17 significant digits.
pub fn curves_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iter,split,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.16e}\n",
            r.iter,
            r.split.name(),
            r.metric,
            r.value
        ));
    }
    out
}
