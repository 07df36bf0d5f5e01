use std::ops::Range;

use crate::data::{half_timescale, Dataset, Sample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{mse_per_frame, ssim_per_frame, MetricReport, SSIM_RANGE};
use crate::model::{
    closed_loop, embed_feedback, rollout_traced, DecoderInput, ForecastRequest, ModelDims, Seq2SeqParams,
};
use crate::rng::{stream_id, RngState};
use crate::sampling::{draw_tau, epsilon_for, m1_source_index, Parity, ScheduleConfig, Strategy};
use crate::tensor::SeqTensor;

use super::bptt::bptt_acc;
use super::{
    adam_step, clip_gradients, composite_loss, composite_loss_grad, MetricsRow, Split, Stage, TrainConfig, TrainState,
};

/// Below this the transition is over and M2 trains on its own outputs only.
const TRANSITION_END_EPSILON: f64 = 1e-3;

const INIT_STREAM: u64 = 1;
const M2_INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const M2_TRAIN_STREAM: u64 = 4;

#[derive(Debug, Clone)]
pub struct ScheduledOutcome {
    /// Parameters with the lowest validation loss.
    pub params: Seq2SeqParams,
    pub best_iter: u64,
    pub curves: Vec<MetricsRow>,
    /// Iteration at which a non-finite loss stopped training, if any.
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TpgOutcome {
    pub m1: Seq2SeqParams,
    pub m2: Seq2SeqParams,
    pub m1_best_iter: u64,
    pub m2_best_iter: u64,
    pub curves: Vec<MetricsRow>,
    pub diverged_at: Option<u64>,
}

/// Composite loss and parameter gradients of one rollout whose decoder
/// inputs are chosen by `selector` (see [`crate::model::rollout`]).
pub fn sample_gradient<S>(p: &Seq2SeqParams, sample: &Sample, selector: S) -> Result<(f64, Seq2SeqParams)>
where
    S: FnMut(usize, &SeqTensor) -> Result<DecoderInput>,
{
    let mut grads = p.zeros_like();
    let loss = sample_gradient_acc(p, sample, selector, &mut grads)?;
    Ok((loss, grads))
}

fn sample_gradient_acc<S>(p: &Seq2SeqParams, sample: &Sample, selector: S, grads: &mut Seq2SeqParams) -> Result<f64>
where
    S: FnMut(usize, &SeqTensor) -> Result<DecoderInput>,
{
    let req = ForecastRequest::new(sample.context.clone(), sample.target.time_len())?;
    let r = rollout_traced(&req, p, selector)?;
    let (loss, _) = composite_loss(&r.predictions, &sample.target)?;
    let g = composite_loss_grad(&r.predictions, &sample.target)?;
    bptt_acc(p, &r.trace, &g, grads)?;
    Ok(loss)
}

fn truth_frame(sample: &Sample, dims: &ModelDims, s: usize) -> Result<SeqTensor> {
    let last = sample.context.frame_slice(sample.context.time_len() - 1);
    SeqTensor::new(
        &[dims.nodes, dims.channels],
        embed_feedback(last, sample.target.frame_slice(s - 1), dims),
    )
}

/// Scheduled-sampling selector: after step `s`, take ground truth with
/// probability `epsilon_for(schedule, iter, s + 1)`.
fn scheduled_gradient(
    p: &Seq2SeqParams,
    sample: &Sample,
    schedule: &ScheduleConfig,
    iter: u64,
    rng: &mut RngState,
    grads: &mut Seq2SeqParams,
) -> Result<f64> {
    sample_gradient_acc(
        p,
        sample,
        |s, _| {
            let eps = epsilon_for(schedule, iter, s + 1)?;
            if draw_tau(eps, rng)?.tau {
                Ok(DecoderInput::External(truth_frame(sample, &p.dims, s)?))
            } else {
                Ok(DecoderInput::Own)
            }
        },
        grads,
    )
}

/// Closed-loop forecasts of the frozen half-timescale model for both parity
/// subsequences of one example.
#[derive(Debug, Clone)]
pub struct M1Forecast {
    pub odd: SeqTensor,
    pub even: SeqTensor,
}

impl M1Forecast {
    /// Output for 1-based full-horizon step `j`.
    pub fn at(&self, j: usize) -> Result<&[f64]> {
        let (parity, k) = m1_source_index(j)?;
        let seq = match parity {
            Parity::Odd => &self.odd,
            Parity::Even => &self.even,
        };
        if k > seq.time_len() {
            return Err(Error::Bounds {
                index: k,
                extent: seq.time_len(),
            });
        }
        Ok(seq.frame_slice(k - 1))
    }
}

pub fn m1_forecast(m1: &Seq2SeqParams, sample: &Sample) -> Result<M1Forecast> {
    let halves = half_timescale(sample, &m1.dims.targets)?;
    let run = |s: &Sample| closed_loop(&ForecastRequest::new(s.context.clone(), s.target.time_len())?, m1);
    Ok(M1Forecast {
        odd: run(&halves.odd)?,
        even: run(&halves.even)?,
    })
}

/// Both parity examples of every sample, odd first.
pub fn half_timescale_dataset(data: &Dataset) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(2 * data.len());
    for s in &data.samples {
        let h = half_timescale(s, &data.meta.targets)?;
        samples.push(h.odd);
        samples.push(h.even);
    }
    let mut meta = data.meta.clone();
    meta.input_len = meta.input_len.div_ceil(2);
    meta.horizon = meta.horizon.div_ceil(2);
    Ok(Dataset { samples, meta })
}

fn mean_closed_loop_loss(p: &Seq2SeqParams, samples: &[Sample], exec: Exec) -> Result<f64> {
    let losses = exec.map(samples, |_, s| -> Result<f64> {
        let req = ForecastRequest::new(s.context.clone(), s.target.time_len())?;
        Ok(composite_loss(&closed_loop(&req, p)?, &s.target)?.0)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

struct Phase<'a> {
    prefix: &'a str,
    train: &'a [Sample],
    val: &'a [Sample],
    test: Option<&'a [Sample]>,
    iters: Range<u64>,
}

struct PhaseResult {
    best: Seq2SeqParams,
    best_iter: u64,
    diverged_at: Option<u64>,
}

/// The shared optimization loop: batch draw, per-sample gradients (fanned
/// out by `cfg.exec`, reduced in batch order), clipping, Adam, periodic
/// validation and best-checkpoint tracking.
fn run_phase<G, E>(
    params: &mut Seq2SeqParams,
    state: &mut TrainState,
    cfg: &TrainConfig,
    phase: Phase<'_>,
    grad_fn: G,
    mut on_iter: E,
    curves: &mut Vec<MetricsRow>,
) -> Result<PhaseResult>
where
    G: Fn(&Seq2SeqParams, usize, u64, &mut RngState, &mut Seq2SeqParams) -> Result<f64> + Sync + Send,
    E: FnMut(u64, &mut TrainState) -> Result<f64>,
{
    if phase.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if phase.val.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    let metric = |name: &str| format!("{}{name}", phase.prefix);
    let validate = |p: &Seq2SeqParams, iter: u64, curves: &mut Vec<MetricsRow>| -> Result<f64> {
        let v = mean_closed_loop_loss(p, phase.val, cfg.exec)?;
        curves.push(MetricsRow::new(iter, Split::Val, metric("loss"), v));
        if let Some(test) = phase.test.filter(|t| !t.is_empty()) {
            let t = mean_closed_loop_loss(p, test, cfg.exec)?;
            curves.push(MetricsRow::new(iter, Split::Test, metric("loss"), t));
        }
        Ok(v)
    };

    let start = phase.iters.start;
    let mut best_loss = validate(params, start, curves)?;
    let mut best = params.clone();
    let mut best_iter = start;
    let mut diverged_at = None;
    let n = phase.train.len();
    let b = cfg.batch_size;

    for i in phase.iters.clone() {
        state.iter = i;
        let eps = on_iter(i, state)?;
        let batch: Vec<usize> = (0..b).map(|_| state.rng.below(n)).collect();
        let base = state.rng.clone();
        let p_ref = &*params;
        let results = cfg.exec.map(&batch, |slot, &idx| -> Result<(f64, Seq2SeqParams)> {
            let mut rng = base.split(stream_id(i, slot as u64));
            let mut g = p_ref.zeros_like();
            let loss = grad_fn(p_ref, idx, i, &mut rng, &mut g)?;
            Ok((loss, g))
        });
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.add_scaled(1.0, &g)?;
        }
        let inv = 1.0 / b as f64;
        loss *= inv;
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        if !loss.is_finite() {
            diverged_at = Some(i);
            break;
        }
        clip_gradients(&mut grads, cfg.clip_norm);
        adam_step(params, &grads, state, cfg)?;
        state.iter = i + 1;

        let done = i + 1 - start;
        if done.is_multiple_of(cfg.val_every as u64) || i + 1 == phase.iters.end {
            curves.push(MetricsRow::new(i + 1, Split::Train, metric("loss"), loss));
            curves.push(MetricsRow::new(i + 1, Split::Train, metric("epsilon"), eps));
            let v = validate(params, i + 1, curves)?;
            if v < best_loss {
                best_loss = v;
                best = params.clone();
                best_iter = i + 1;
            }
        }
    }
    Ok(PhaseResult {
        best,
        best_iter,
        diverged_at,
    })
}

fn model_dims(data: &Dataset, hidden: usize) -> ModelDims {
    ModelDims {
        hidden,
        nodes: data.meta.nodes,
        channels: data.meta.channels,
        targets: data.meta.targets.clone(),
    }
}

/// Teacher forcing or scheduled sampling. `test`, when given, adds test-loss
/// rows to the curves at every validation point.
pub fn train_scheduled(
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<ScheduledOutcome> {
    cfg.validate()?;
    let schedule = &cfg.schedule;
    if !matches!(
        schedule.strategy,
        Strategy::TeacherForcing | Strategy::ScheduledSampling
    ) {
        return Err(Error::config(
            "train_scheduled handles teacher_forcing and scheduled_sampling only",
        ));
    }
    let root = RngState::new(cfg.seed);
    let mut params = Seq2SeqParams::init(
        model_dims(train, cfg.hidden),
        cfg.init_scale,
        &mut root.split(INIT_STREAM),
    )?;
    let mut state = TrainState::new(&params, Stage::M2Solo, root.split(TRAIN_STREAM).seed());
    let mut curves = Vec::new();
    let samples = &train.samples;
    let res = run_phase(
        &mut params,
        &mut state,
        cfg,
        Phase {
            prefix: "",
            train: samples,
            val: &val.samples,
            test: test.map(|t| t.samples.as_slice()),
            iters: 0..cfg.total_iters as u64,
        },
        |p, idx, i, rng, g| scheduled_gradient(p, &samples[idx], schedule, i, rng, g),
        |i, _| epsilon_for(schedule, i, 2),
        &mut curves,
    )?;
    Ok(ScheduledOutcome {
        params: res.best,
        best_iter: res.best_iter,
        curves,
        diverged_at: res.diverged_at,
    })
}

/// Two-stage TPG training.
///
/// Stage 1 trains M1 with scheduled sampling on the half-timescale
/// (odd/even) examples for `stage1_iters`. Stage 2 freezes M1 and trains M2
/// on full examples; after M2's step `s` the next decoder input is M1's
/// closed-loop output for horizon step `s` with probability
/// `epsilon_for(schedule, i, s + 1)`, and M2's own prediction otherwise.
/// Once that probability drops below 1e-3 (or `transition_iters` elapse) M2
/// trains on its own predictions only.
pub fn train_tpg(train: &Dataset, val: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<TpgOutcome> {
    cfg.validate()?;
    let schedule = &cfg.schedule;
    if schedule.strategy != Strategy::Tpg {
        return Err(Error::config("train_tpg requires strategy tpg"));
    }
    if train.meta.horizon < 2 {
        return Err(Error::config(format!(
            "TPG needs a horizon of at least 2 to subsample, got {}",
            train.meta.horizon
        )));
    }
    let stage1 = schedule.stage1_iters as u64;
    let total = cfg.total_iters as u64;
    if stage1 >= total {
        return Err(Error::config(format!(
            "stage1_iters ({stage1}) must be below total_iters ({total})"
        )));
    }

    let root = RngState::new(cfg.seed);
    let dims = model_dims(train, cfg.hidden);
    let mut curves = Vec::new();

    // Stage 1: half-timescale model.
    let half_train = half_timescale_dataset(train)?;
    let half_val = half_timescale_dataset(val)?;
    let half_test = test.map(half_timescale_dataset).transpose()?;
    let m1_schedule = ScheduleConfig {
        strategy: Strategy::ScheduledSampling,
        lambda: cfg.stage1_lambda.unwrap_or(schedule.lambda),
        index_aware: false,
        stage1_iters: 0,
        transition_iters: 1,
    };
    let mut m1 = Seq2SeqParams::init(dims.clone(), cfg.init_scale, &mut root.split(INIT_STREAM))?;
    let mut state = TrainState::new(&m1, Stage::M1, root.split(TRAIN_STREAM).seed());
    let hs = &half_train.samples;
    let r1 = run_phase(
        &mut m1,
        &mut state,
        cfg,
        Phase {
            prefix: "m1.",
            train: hs,
            val: &half_val.samples,
            test: half_test.as_ref().map(|t| t.samples.as_slice()),
            iters: 0..stage1,
        },
        |p, idx, i, rng, g| scheduled_gradient(p, &hs[idx], &m1_schedule, i, rng, g),
        |i, _| epsilon_for(&m1_schedule, i, 2),
        &mut curves,
    )?;
    let m1 = r1.best;
    if let Some(at) = r1.diverged_at {
        return Ok(TpgOutcome {
            m2: m1.clone(),
            m1,
            m1_best_iter: r1.best_iter,
            m2_best_iter: r1.best_iter,
            curves,
            diverged_at: Some(at),
        });
    }

    // Stage 2: M1 frozen; its forecasts are a pure function of each sample.
    let forecasts: Vec<M1Forecast> = cfg
        .exec
        .map(&train.samples, |_, s| m1_forecast(&m1, s))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut m2 = if cfg.warm_start_m2 {
        m1.clone()
    } else {
        Seq2SeqParams::init(dims, cfg.init_scale, &mut root.split(M2_INIT_STREAM))?
    };
    let mut state = TrainState::new(&m2, Stage::Transition, root.split(M2_TRAIN_STREAM).seed());
    let samples = &train.samples;
    let transition_end = stage1 + schedule.transition_iters as u64;
    let solo = std::sync::atomic::AtomicBool::new(false);
    let r2 = run_phase(
        &mut m2,
        &mut state,
        cfg,
        Phase {
            prefix: "m2.",
            train: samples,
            val: &val.samples,
            test: test.map(|t| t.samples.as_slice()),
            iters: stage1..total,
        },
        |p, idx, i, rng, g| {
            let sample = &samples[idx];
            let fc = &forecasts[idx];
            let solo = solo.load(std::sync::atomic::Ordering::Relaxed);
            sample_gradient_acc(
                p,
                sample,
                |s, _| {
                    let eps = if solo { 0.0 } else { epsilon_for(schedule, i, s + 1)? };
                    if draw_tau(eps, rng)?.tau {
                        let last = sample.context.frame_slice(sample.context.time_len() - 1);
                        let frame = embed_feedback(last, fc.at(s)?, &p.dims);
                        Ok(DecoderInput::External(SeqTensor::new(
                            &[p.dims.nodes, p.dims.channels],
                            frame,
                        )?))
                    } else {
                        Ok(DecoderInput::Own)
                    }
                },
                g,
            )
        },
        |i, st| {
            if st.stage == Stage::Transition
                && (i >= transition_end || epsilon_for(schedule, i, 2)? < TRANSITION_END_EPSILON)
            {
                st.stage = Stage::M2Solo;
                solo.store(true, std::sync::atomic::Ordering::Relaxed);
            }
            Ok(if st.stage == Stage::M2Solo {
                0.0
            } else {
                epsilon_for(schedule, i, 2)?
            })
        },
        &mut curves,
    )?;
    Ok(TpgOutcome {
        m1,
        m2: r2.best,
        m1_best_iter: r1.best_iter,
        m2_best_iter: r2.best_iter,
        curves,
        diverged_at: r2.diverged_at,
    })
}

/// Closed-loop test-time metrics over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Mean composite loss per sample.
    pub loss: f64,
    /// RMSE over all target elements at each horizon step.
    pub rmse_by_step: Vec<f64>,
    /// Per-frame MSE at each horizon step (frame data only).
    pub mse_by_step: Option<Vec<f64>>,
    /// Mean SSIM at each horizon step (frame data only).
    pub ssim_by_step: Option<Vec<f64>>,
    pub channel_names: Vec<String>,
}

impl Evaluation {
    pub fn ssim(&self) -> Option<f64> {
        self.ssim_by_step
            .as_ref()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mse_per_frame(&self) -> Option<f64> {
        self.mse_by_step
            .as_ref()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn rows(&self, iter: u64, split: Split) -> Vec<MetricsRow> {
        let mut rows = vec![
            MetricsRow::new(iter, split, "loss", self.loss),
            MetricsRow::new(iter, split, "rmse", self.report.rmse_all),
            MetricsRow::new(iter, split, "mae", self.report.mae_all),
        ];
        for (c, name) in self.channel_names.iter().enumerate() {
            rows.push(MetricsRow::new(
                iter,
                split,
                format!("rmse.{name}"),
                self.report.rmse[c],
            ));
            rows.push(MetricsRow::new(iter, split, format!("mae.{name}"), self.report.mae[c]));
        }
        if let (Some(s), Some(m)) = (self.ssim(), self.mse_per_frame()) {
            rows.push(MetricsRow::new(iter, split, "ssim", s));
            rows.push(MetricsRow::new(iter, split, "mse_frame", m));
        }
        for (k, v) in self.rmse_by_step.iter().enumerate() {
            rows.push(MetricsRow::new(iter, split, format!("rmse.step{}", k + 1), *v));
        }
        if let Some(ss) = &self.ssim_by_step {
            for (k, v) in ss.iter().enumerate() {
                rows.push(MetricsRow::new(iter, split, format!("ssim.step{}", k + 1), *v));
            }
        }
        if let Some(ms) = &self.mse_by_step {
            for (k, v) in ms.iter().enumerate() {
                rows.push(MetricsRow::new(iter, split, format!("mse.step{}", k + 1), *v));
            }
        }
        rows
    }
}

/// Closed-loop forecasts for every sample, scored against the targets.
pub fn evaluate(p: &Seq2SeqParams, data: &Dataset, exec: Exec) -> Result<Evaluation> {
    let preds = exec
        .map(&data.samples, |_, s| {
            closed_loop(&ForecastRequest::new(s.context.clone(), s.target.time_len())?, p)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, data)
}

/// Score precomputed forecasts (e.g. a reference predictor) like [`evaluate`].
pub fn evaluate_predictions(preds: &[SeqTensor], data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    if preds.len() != data.len() {
        return Err(Error::dims("evaluate", &[preds.len()], &[data.len()]));
    }
    let pairs: Vec<(&SeqTensor, &SeqTensor)> = preds.iter().zip(data.samples.iter().map(|s| &s.target)).collect();
    let report = MetricReport::compute(&pairs)?;
    let k = data.samples[0].target.time_len();
    let mut step_sq = vec![0.0; k];
    let mut step_n = vec![0usize; k];
    let mut loss = 0.0;
    let grid = data.meta.grid;
    let mut ssim = grid.map(|_| vec![0.0; k]);
    let mut mse = grid.map(|_| vec![0.0; k]);
    for (pred, target) in &pairs {
        loss += composite_loss(pred, target)?.0;
        for s in 0..k {
            let (a, b) = (pred.frame_slice(s), target.frame_slice(s));
            step_sq[s] += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            step_n[s] += a.len();
        }
        if let (Some(g), Some(ss), Some(ms)) = (grid, ssim.as_mut(), mse.as_mut()) {
            for (s, m) in mse_per_frame(pred, target)?.into_iter().enumerate() {
                ms[s] += m;
                // SSIM assumes values in [0, SSIM_RANGE]; a linear output layer can
                // overshoot, so predictions are clipped to the pixel range first.
                let mut frame = pred.frame(s)?;
                frame.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, SSIM_RANGE));
                ss[s] += ssim_per_frame(&frame, &target.frame(s)?, g)?;
            }
        }
    }
    let n = pairs.len() as f64;
    let scale = |v: Option<Vec<f64>>| v.map(|v| v.into_iter().map(|x| x / n).collect());
    Ok(Evaluation {
        report,
        loss: loss / n,
        rmse_by_step: step_sq
            .iter()
            .zip(&step_n)
            .map(|(s, c)| (s / *c as f64).sqrt())
            .collect(),
        mse_by_step: scale(mse),
        ssim_by_step: scale(ssim),
        channel_names: data
            .meta
            .targets
            .iter()
            .map(|&t| {
                data.meta
                    .channel_names
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| format!("ch{t}"))
            })
            .collect(),
    })
}
