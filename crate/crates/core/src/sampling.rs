//! Decoder-input selection: decay schedules, Bernoulli mixing, odd/even
//! timescale subsampling and the mapping from full-horizon steps to the
//! half-timescale model's outputs.
//!
//! Positions are 1-based where parity matters: the first step of a sequence
//! is "odd".

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::SeqTensor;

/// Exponents above this make `exp` overflow to infinity; the decay is then 0.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    TeacherForcing,
    ScheduledSampling,
    Tpg,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::TeacherForcing => "teacher_forcing",
            Strategy::ScheduledSampling => "scheduled_sampling",
            Strategy::Tpg => "tpg",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "teacher_forcing" | "tf" => Ok(Strategy::TeacherForcing),
            "scheduled_sampling" | "ss" => Ok(Strategy::ScheduledSampling),
            "tpg" => Ok(Strategy::Tpg),
            other => Err(Error::config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub strategy: Strategy,
    /// Decay speed of the annealed probability.
    pub lambda: f64,
    /// Use the position-aware decay during the TPG transition (and for
    /// scheduled sampling when set).
    pub index_aware: bool,
    /// Iterations spent training the half-timescale model (TPG only).
    pub stage1_iters: usize,
    /// Upper bound on the length of the TPG transition phase.
    pub transition_iters: usize,
}

impl ScheduleConfig {
    pub fn teacher_forcing() -> Self {
        Self {
            strategy: Strategy::TeacherForcing,
            lambda: 1.0,
            index_aware: false,
            stage1_iters: 0,
            transition_iters: 1,
        }
    }

    pub fn scheduled_sampling(lambda: f64) -> Self {
        Self {
            strategy: Strategy::ScheduledSampling,
            lambda,
            index_aware: false,
            stage1_iters: 0,
            transition_iters: 1,
        }
    }

    pub fn tpg(lambda: f64, stage1_iters: usize, transition_iters: usize) -> Self {
        Self {
            strategy: Strategy::Tpg,
            lambda,
            index_aware: true,
            stage1_iters,
            transition_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.transition_iters == 0 {
            return Err(Error::config("transition_iters must be at least 1"));
        }
        if self.strategy == Strategy::Tpg && self.stage1_iters == 0 {
            return Err(Error::config("strategy tpg requires stage1_iters >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    GroundTruth,
    OwnPrediction,
    IntermediateModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingDecision {
    pub tau: bool,
    pub epsilon_used: f64,
}

impl SamplingDecision {
    /// Where the decoder input comes from under `strategy`.
    pub fn source(&self, strategy: Strategy) -> InputSource {
        match (self.tau, strategy) {
            (false, _) => InputSource::OwnPrediction,
            (true, Strategy::Tpg) => InputSource::IntermediateModel,
            (true, _) => InputSource::GroundTruth,
        }
    }
}

/// `λ / (λ + exp(i/λ))`.
pub fn inverse_sigmoid_epsilon(i: u64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    Ok(decay(i as f64 / lambda, lambda))
}

/// `λ / (λ + exp(i·ln(v)/λ))`, with `v ≥ 2` the position of the decoder input.
pub fn index_aware_epsilon(i: u64, v: usize, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    if v < 2 {
        return Err(Error::config(format!("sequence index v must be >= 2, got {v}")));
    }
    Ok(decay(i as f64 * (v as f64).ln() / lambda, lambda))
}

fn decay(exponent: f64, lambda: f64) -> f64 {
    if exponent > MAX_EXPONENT {
        return 0.0;
    }
    lambda / (lambda + exponent.exp())
}

/// Probability of taking the preferred (non-self) input at global batch `i`
/// for the decoder input at position `v`.
///
/// For TPG, `i` counts from the start of training; the transition decay
/// restarts at `stage1_iters`, and before that the probability is 1.
pub fn epsilon_for(config: &ScheduleConfig, i: u64, v: usize) -> Result<f64> {
    match config.strategy {
        Strategy::TeacherForcing => Ok(1.0),
        Strategy::ScheduledSampling if config.index_aware => index_aware_epsilon(i, v, config.lambda),
        Strategy::ScheduledSampling => inverse_sigmoid_epsilon(i, config.lambda),
        Strategy::Tpg => {
            let stage1 = config.stage1_iters as u64;
            if i < stage1 {
                return Ok(1.0);
            }
            if config.index_aware {
                index_aware_epsilon(i - stage1, v, config.lambda)
            } else {
                inverse_sigmoid_epsilon(i - stage1, config.lambda)
            }
        }
    }
}

/// One coin flip: `τ = 1` with probability `epsilon`.
pub fn draw_tau(epsilon: f64, rng: &mut RngState) -> Result<SamplingDecision> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let tau = if epsilon >= 1.0 {
        true
    } else if epsilon <= 0.0 {
        false
    } else {
        rng.bernoulli(epsilon)
    };
    Ok(SamplingDecision {
        tau,
        epsilon_used: epsilon,
    })
}

/// `(1−τ)·fallback + τ·preferred`, returned by copy so values stay bit-exact.
pub fn mix_inputs(tau: bool, fallback: &SeqTensor, preferred: &SeqTensor) -> Result<SeqTensor> {
    if fallback.shape() != preferred.shape() {
        return Err(Error::dims("mix_inputs", fallback.shape(), preferred.shape()));
    }
    Ok(if tau { preferred.clone() } else { fallback.clone() })
}

/// Split along time into 1-based odd positions (1,3,5,…) and even positions.
pub fn subsample_odd_even(seq: &SeqTensor) -> Result<(SeqTensor, SeqTensor)> {
    let t = seq.time_len();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let odd: Vec<usize> = (0..t).step_by(2).collect();
    let even: Vec<usize> = (1..t).step_by(2).collect();
    Ok((seq.slice_time(&odd)?, seq.slice_time(&even)?))
}

/// Inverse of [`subsample_odd_even`].
pub fn interleave(odd: &SeqTensor, even: &SeqTensor) -> Result<SeqTensor> {
    let (no, ne) = (odd.time_len(), even.time_len());
    if (no != ne && no != ne + 1) || odd.shape()[1..] != even.shape()[1..] {
        return Err(Error::dims("interleave", odd.shape(), even.shape()));
    }
    let fl = odd.frame_len();
    let mut data = Vec::with_capacity((no + ne) * fl);
    for k in 0..no {
        data.extend_from_slice(odd.frame_slice(k));
        if k < ne {
            data.extend_from_slice(even.frame_slice(k));
        }
    }
    let mut shape = odd.shape().to_vec();
    shape[0] = no + ne;
    SeqTensor::new(&shape, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Odd,
    Even,
}

/// For 1-based step `j` of the full horizon, the parity subsequence that
/// holds it and its 1-based position there.
pub fn m1_source_index(j: usize) -> Result<(Parity, usize)> {
    if j < 1 {
        return Err(Error::Bounds { index: j, extent: 1 });
    }
    let parity = if j % 2 == 1 { Parity::Odd } else { Parity::Even };
    Ok((parity, j.div_ceil(2)))
}
