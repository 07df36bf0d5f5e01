//! Standard synthetic fixtures: the multinode sensor analog and the
//! moving-sprites frame analog, split and (for multinode) z-scored.

use crate::data::{
    gen_multinode_series, split, sprite_sequences, windowize, ChannelStats, Dataset, MultinodeConfig, SpriteConfig,
};
use crate::error::{Error, Result};
use crate::sampling::{ScheduleConfig, Strategy};
use crate::tensor::SeqTensor;
use crate::training::TrainConfig;

/// Decay speed for scheduled sampling at desk scale (2 000 iterations).
pub const DESK_SS_LAMBDA: f64 = 200.0;
/// Decay speed of the index-aware TPG transition at desk scale.
pub const DESK_TPG_LAMBDA: f64 = 100.0;
/// Iterations spent training the half-timescale model before the transition.
pub const DESK_STAGE1_ITERS: usize = 500;
/// Decay speed of the half-timescale model's own scheduled sampling; short
/// enough that it trains mostly on its own predictions within stage 1.
pub const DESK_STAGE1_LAMBDA: f64 = 30.0;

/// Schedule used by the standard experiments for `strategy` when training
/// for `total_iters`; TPG's transition may use all remaining iterations.
pub fn desk_schedule(strategy: Strategy, total_iters: usize) -> ScheduleConfig {
    match strategy {
        Strategy::TeacherForcing => ScheduleConfig::teacher_forcing(),
        Strategy::ScheduledSampling => ScheduleConfig::scheduled_sampling(DESK_SS_LAMBDA),
        Strategy::Tpg => {
            let stage1 = DESK_STAGE1_ITERS.min(total_iters.saturating_sub(1)).max(1);
            ScheduleConfig::tpg(DESK_TPG_LAMBDA, stage1, total_iters.saturating_sub(stage1).max(1))
        }
    }
}

/// Full desk-scale training configuration for `strategy`: the default
/// optimizer settings plus [`desk_schedule`] and, for TPG,
/// [`DESK_STAGE1_LAMBDA`].
pub fn desk_train_config(strategy: Strategy, total_iters: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        schedule: desk_schedule(strategy, total_iters),
        stage1_lambda: (strategy == Strategy::Tpg).then_some(DESK_STAGE1_LAMBDA),
        total_iters,
        seed,
        ..TrainConfig::default()
    }
}

/// Train/validation/test partitions of one fixture.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultinodeExperiment {
    pub series: MultinodeConfig,
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub targets: Vec<usize>,
    pub fractions: (f64, f64, f64),
}

impl Default for MultinodeExperiment {
    /// Ten nodes, nine channels, three targets, 24 in / 12 out.
    fn default() -> Self {
        Self {
            series: MultinodeConfig {
                nodes: 10,
                channels: 9,
                length: 1500,
                coupling: 0.5,
                noise: 0.12,
                seed: 1,
            },
            input_len: 24,
            horizon: 12,
            stride: 1,
            targets: vec![0, 1, 2],
            fractions: (0.8, 0.1, 0.1),
        }
    }
}

impl MultinodeExperiment {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.series.seed = seed;
        self
    }

    /// Chronological split, then every partition z-scored with training statistics.
    pub fn build(&self) -> Result<Splits> {
        let [train, val, test] = self.segments()?;
        self.from_segments(&train, &val, &test)
    }

    /// The raw (un-normalized) stretches of the series covered by the
    /// train, validation and test windows. Windowing each segment on its own
    /// reproduces exactly the windows of the corresponding partition.
    pub fn segments(&self) -> Result<[SeqTensor; 3]> {
        let series = gen_multinode_series(&self.series)?;
        let all = windowize(&series, self.input_len, self.horizon, self.stride, &self.targets)?;
        let (train, val, test) = split(&all, self.fractions)?;
        let window = self.input_len + self.horizon;
        let segment = |d: &Dataset| -> Result<SeqTensor> {
            let (first, last) = match (d.samples.first(), d.samples.last()) {
                (Some(a), Some(b)) => (a.start, b.start),
                _ => return Err(Error::config("split produced an empty partition")),
            };
            series.slice_time(&(first..last + window).collect::<Vec<_>>())
        };
        Ok([segment(&train)?, segment(&val)?, segment(&test)?])
    }

    /// Window each raw segment and z-score all three with statistics fitted
    /// on the training segment.
    pub fn from_segments(&self, train: &SeqTensor, val: &SeqTensor, test: &SeqTensor) -> Result<Splits> {
        let win = |s: &SeqTensor| windowize(s, self.input_len, self.horizon, self.stride, &self.targets);
        let (train, val, test) = (win(train)?, win(val)?, win(test)?);
        let stats = ChannelStats::fit(&train)?;
        Ok(Splits {
            train: train.normalized(&stats)?,
            val: val.normalized(&stats)?,
            test: test.normalized(&stats)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteExperiment {
    /// `length` must equal `input_len + horizon`: one window per sequence.
    pub sprites: SpriteConfig,
    pub input_len: usize,
    pub horizon: usize,
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub test_sequences: usize,
}

impl Default for SpriteExperiment {
    /// 16×16 grid, four 5×5 sprites at unit speed, 20 in / 20 out.
    fn default() -> Self {
        Self {
            sprites: SpriteConfig {
                height: 16,
                width: 16,
                sprites: 4,
                sprite_size: 5,
                speed_min: 1,
                speed_max: 1,
                length: 40,
                seed: 1,
            },
            input_len: 20,
            horizon: 20,
            train_sequences: 256,
            val_sequences: 32,
            test_sequences: 32,
        }
    }
}

impl SpriteExperiment {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sprites.seed = seed;
        self
    }

    /// Independent sequences, each one window; pixel values stay in `[0, 1]`
    /// (no z-scoring, so SSIM keeps its unit dynamic range).
    pub fn build(&self) -> Result<Splits> {
        let [train, val, test] = self.sequences(None)?;
        self.from_sequences(&train, &val, &test)
    }

    /// Train, validation and test sequences, optionally textured with
    /// sprite patterns (e.g. digits loaded from an IDX file).
    pub fn sequences(&self, patterns: Option<&[SeqTensor]>) -> Result<[Vec<SeqTensor>; 3]> {
        let window = self.input_len + self.horizon;
        if self.sprites.length != window {
            return Err(Error::config(format!(
                "sprite sequence length {} must equal input_len + horizon = {window}",
                self.sprites.length
            )));
        }
        let counts = [self.train_sequences, self.val_sequences, self.test_sequences];
        if counts.contains(&0) {
            return Err(Error::config("every sprite partition needs at least one sequence"));
        }
        let mut seqs = sprite_sequences(&self.sprites, counts.iter().sum(), patterns)?;
        let test = seqs.split_off(counts[0] + counts[1]);
        let val = seqs.split_off(counts[0]);
        Ok([seqs, val, test])
    }

    pub fn from_sequences(&self, train: &[SeqTensor], val: &[SeqTensor], test: &[SeqTensor]) -> Result<Splits> {
        let grid = (self.sprites.height, self.sprites.width);
        let window = self.input_len + self.horizon;
        let part = |seqs: &[SeqTensor]| -> Result<Dataset> {
            let mut samples = Vec::with_capacity(seqs.len());
            let mut meta = None;
            for seq in seqs {
                if seq.len() != seq.time_len() * grid.0 * grid.1 {
                    return Err(Error::dims(
                        "sprite sequence",
                        seq.shape(),
                        &[seq.time_len(), grid.0 * grid.1, 1],
                    ));
                }
                let mut d = windowize(seq, self.input_len, self.horizon, window, &[0])?;
                samples.append(&mut d.samples);
                meta.get_or_insert(d.meta);
            }
            let Some(mut meta) = meta else {
                return Err(Error::config("every sprite partition needs at least one sequence"));
            };
            meta.grid = Some(grid);
            meta.channel_names = vec!["pixel".to_string()];
            Ok(Dataset { samples, meta })
        };
        Ok(Splits {
            train: part(train)?,
            val: part(val)?,
            test: part(test)?,
        })
    }
}
