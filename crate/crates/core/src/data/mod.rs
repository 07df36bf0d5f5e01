//! Datasets: synthetic generators, windowing, normalization, splits and
//! file formats.

mod frames;
mod idx;
mod series_csv;
mod synth;

pub use frames::{read_frames, write_frames, FRAMES_MAGIC, FRAMES_VERSION};
pub use idx::load_idx_images;
pub use series_csv::{load_csv, write_csv};
pub use synth::{
    advance_axis, gen_moving_sprites, gen_multinode_series, sprite_sequences, MultinodeConfig, SpriteConfig,
    AR_COEFFICIENT, PERIODS,
};

use crate::error::{Error, Result};
use crate::sampling::subsample_odd_even;
use crate::tensor::SeqTensor;

/// One forecasting example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[T_in, nodes, channels]`
    pub context: SeqTensor,
    /// `[K, nodes, targets]`
    pub target: SeqTensor,
    /// Time index of the first context frame in the source series.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMeta {
    pub nodes: usize,
    pub channels: usize,
    pub targets: Vec<usize>,
    pub input_len: usize,
    pub horizon: usize,
    /// Per-channel statistics used for z-scoring; `None` when un-normalized.
    pub stats: Option<ChannelStats>,
    /// `(H, W)` when samples are flattened frames.
    pub grid: Option<(usize, usize)>,
    pub channel_names: Vec<String>,
    /// Windows discarded at split boundaries to avoid overlap.
    pub dropped_boundary: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DataMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.meta.input_len + self.meta.horizon
    }
}

fn default_names(channels: usize) -> Vec<String> {
    (0..channels).map(|c| format!("ch{c}")).collect()
}

/// Slide a `T_in + K` window over a `[L, nodes, channels]` series.
pub fn windowize(
    series: &SeqTensor,
    input_len: usize,
    horizon: usize,
    stride: usize,
    targets: &[usize],
) -> Result<Dataset> {
    if series.shape().len() != 3 {
        return Err(Error::config(format!(
            "series must be [time, nodes, channels], got {:?}",
            series.shape()
        )));
    }
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("input_len, horizon and stride must be positive"));
    }
    let (len, nodes, channels) = (series.shape()[0], series.shape()[1], series.shape()[2]);
    if targets.is_empty() || targets.iter().any(|&t| t >= channels) {
        return Err(Error::config(format!(
            "target channels {targets:?} invalid for {channels} channels"
        )));
    }
    let window = input_len + horizon;
    if len < window {
        return Err(Error::config(format!(
            "series of length {len} is shorter than one window ({input_len} + {horizon})"
        )));
    }
    let mut samples = Vec::new();
    let mut start = 0;
    while start + window <= len {
        let ctx_idx: Vec<usize> = (start..start + input_len).collect();
        let context = series.slice_time(&ctx_idx)?;
        let mut tdata = Vec::with_capacity(horizon * nodes * targets.len());
        for t in start + input_len..start + window {
            let frame = series.frame_slice(t);
            for n in 0..nodes {
                for &ch in targets {
                    tdata.push(frame[n * channels + ch]);
                }
            }
        }
        samples.push(Sample {
            context,
            target: SeqTensor::new(&[horizon, nodes, targets.len()], tdata)?,
            start,
        });
        start += stride;
    }
    Ok(Dataset {
        samples,
        meta: DataMeta {
            nodes,
            channels,
            targets: targets.to_vec(),
            input_len,
            horizon,
            stats: None,
            grid: None,
            channel_names: default_names(channels),
            dropped_boundary: 0,
        },
    })
}

impl ChannelStats {
    /// Per-channel mean and population std over every context frame of `train`.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config("cannot fit normalization on an empty training split"));
        }
        let f = train.meta.channels;
        let mut sum = vec![0.0; f];
        let mut count = 0usize;
        for s in &train.samples {
            for (i, v) in s.context.data().iter().enumerate() {
                sum[i % f] += v;
            }
            count += s.context.len() / f;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; f];
        for s in &train.samples {
            for (i, v) in s.context.data().iter().enumerate() {
                let d = v - mean[i % f];
                sq[i % f] += d * d;
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        if let Some(c) = std.iter().position(|&s| !(s > 1e-12)) {
            let name = train
                .meta
                .channel_names
                .get(c)
                .cloned()
                .unwrap_or_else(|| format!("ch{c}"));
            return Err(Error::config(format!(
                "channel `{name}` has zero variance; cannot normalize"
            )));
        }
        Ok(Self { mean, std })
    }
}

impl Dataset {
    /// z-score every sample with `stats` (fitted on the training split).
    pub fn normalized(&self, stats: &ChannelStats) -> Result<Dataset> {
        let f = self.meta.channels;
        if stats.mean.len() != f {
            return Err(Error::dims("normalize", &[stats.mean.len()], &[f]));
        }
        let targets = &self.meta.targets;
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut context = s.context.clone();
                for (i, v) in context.data_mut().iter_mut().enumerate() {
                    *v = (*v - stats.mean[i % f]) / stats.std[i % f];
                }
                let mut target = s.target.clone();
                for (i, v) in target.data_mut().iter_mut().enumerate() {
                    let ch = targets[i % targets.len()];
                    *v = (*v - stats.mean[ch]) / stats.std[ch];
                }
                Sample {
                    context,
                    target,
                    start: s.start,
                }
            })
            .collect();
        let mut meta = self.meta.clone();
        meta.stats = Some(stats.clone());
        Ok(Dataset { samples, meta })
    }
}

/// Map normalized `[K, nodes, targets]` predictions back to data units.
pub fn denormalize(pred: &SeqTensor, meta: &DataMeta) -> Result<SeqTensor> {
    let Some(stats) = &meta.stats else {
        return Ok(pred.clone());
    };
    let nt = meta.targets.len();
    if !pred.len().is_multiple_of(nt) {
        return Err(Error::dims("denormalize", pred.shape(), &[nt]));
    }
    let mut out = pred.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = meta.targets[i % nt];
        *v = *v * stats.std[ch] + stats.mean[ch];
    }
    Ok(out)
}

/// Chronological split by window index. Leading windows of the validation
/// and test partitions that overlap the previous partition in time are
/// dropped; the count is recorded in each partition's `meta.dropped_boundary`.
pub fn split(dataset: &Dataset, fractions: (f64, f64, f64)) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let n = dataset.len();
    let n_val = (b * n as f64).round() as usize;
    let n_test = (c * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    let window = dataset.window_len();

    let mut parts: Vec<Vec<Sample>> = Vec::with_capacity(3);
    let mut dropped = 0;
    let mut last_end: Option<usize> = None;
    let mut lo = 0;
    for (size, frac) in [(n_train, a), (n_val, b), (n_test, c)] {
        let mut kept = Vec::new();
        for s in &dataset.samples[lo..lo + size] {
            if let Some(end) = last_end {
                if s.start < end && kept.is_empty() {
                    dropped += 1;
                    continue;
                }
            }
            kept.push(s.clone());
        }
        if frac > 0.0 && kept.is_empty() {
            return Err(Error::config(format!(
                "split fraction {frac} leaves an empty partition from {n} windows"
            )));
        }
        if let Some(s) = kept.last() {
            last_end = Some(s.start + window);
        }
        parts.push(kept);
        lo += size;
    }
    let mut meta = dataset.meta.clone();
    meta.dropped_boundary = dropped;
    let mut it = parts.into_iter().map(|samples| Dataset {
        samples,
        meta: meta.clone(),
    });
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

/// The two half-timescale examples derived from one full example.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSamples {
    /// Targets at 1-based horizon positions 1, 3, 5, …
    pub odd: Sample,
    /// Targets at horizon positions 2, 4, 6, …
    pub even: Sample,
}

/// Subsample the concatenated context+target sequence into its two
/// stride-2 subsequences. Each becomes an example whose context is the part
/// before the original forecast boundary and whose target is the rest.
pub fn half_timescale(sample: &Sample, targets: &[usize]) -> Result<HalfSamples> {
    let t_in = sample.context.time_len();
    let k = sample.target.time_len();
    if k < 2 {
        return Err(Error::config(format!(
            "half-timescale examples need a horizon >= 2, got {k}"
        )));
    }
    if t_in < 2 {
        return Err(Error::config(format!(
            "half-timescale examples need a context >= 2, got {t_in}"
        )));
    }
    // Embed targets as full frames so context and target share one sequence;
    // non-target channels are never read back from the target part.
    let (nodes, channels) = (sample.context.shape()[1], sample.context.shape()[2]);
    let nt = targets.len();
    let mut data = sample.context.data().to_vec();
    for t in 0..k {
        let tf = sample.target.frame_slice(t);
        let mut frame = vec![0.0; nodes * channels];
        for n in 0..nodes {
            for (j, &ch) in targets.iter().enumerate() {
                frame[n * channels + ch] = tf[n * nt + j];
            }
        }
        data.extend(frame);
    }
    let full = SeqTensor::new(&[t_in + k, nodes, channels], data)?;
    let (first, second) = subsample_odd_even(&full)?;

    let build = |sub: &SeqTensor, offset: usize| -> Result<(Sample, bool)> {
        // sub holds original indices offset, offset+2, …
        let n_ctx = (t_in - offset).div_ceil(2);
        let ctx_idx: Vec<usize> = (0..n_ctx).collect();
        let tgt_idx: Vec<usize> = (n_ctx..sub.time_len()).collect();
        let first_target = offset + 2 * n_ctx - t_in; // 0-based horizon position
        let tgt_full = sub.slice_time(&tgt_idx)?;
        let mut tdata = Vec::with_capacity(tgt_idx.len() * nodes * nt);
        for t in 0..tgt_full.time_len() {
            let f = tgt_full.frame_slice(t);
            for n in 0..nodes {
                for &ch in targets {
                    tdata.push(f[n * channels + ch]);
                }
            }
        }
        Ok((
            Sample {
                context: sub.slice_time(&ctx_idx)?,
                target: SeqTensor::new(&[tgt_idx.len(), nodes, nt], tdata)?,
                start: sample.start + offset,
            },
            first_target == 0,
        ))
    };
    let (a, a_is_odd) = build(&first, 0)?;
    let (b, _) = build(&second, 1)?;
    Ok(if a_is_odd {
        HalfSamples { odd: a, even: b }
    } else {
        HalfSamples { odd: b, even: a }
    })
}
