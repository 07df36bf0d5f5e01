//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every key has a default, so an empty file is a valid configuration.
//! Values spelled `auto` resolve to a dataset- or strategy-dependent default
//! and `none` leaves an optional setting unset. The fully resolved
//! configuration is rendered by [`ExperimentConfig::echo`].

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tpgf_core::experiment::{desk_schedule, MultinodeExperiment, SpriteExperiment, DESK_STAGE1_LAMBDA};
use tpgf_core::sampling::{ScheduleConfig, Strategy};
use tpgf_core::training::TrainConfig;
use tpgf_core::Exec;

use crate::error::CliError;

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "dataset",
    "seed",
    "out_dir",
    "data_dir",
    "input_len",
    "horizon",
    "nodes",
    "channels",
    "targets",
    "length",
    "coupling",
    "noise",
    "stride",
    "split",
    "height",
    "width",
    "sprites",
    "sprite_size",
    "speed_min",
    "speed_max",
    "train_sequences",
    "val_sequences",
    "test_sequences",
    "idx_path",
    "strategy",
    "lambda",
    "index_aware",
    "stage1_iters",
    "transition_iters",
    "stage1_lambda",
    "warm_start_m2",
    "hidden",
    "init_scale",
    "learning_rate",
    "batch_size",
    "total_iters",
    "clip_norm",
    "beta1",
    "beta2",
    "eps_adam",
    "val_every",
    "parallel",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Multinode,
    Sprites,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Multinode => "multinode",
            Family::Sprites => "sprites",
        }
    }
}

impl Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "multinode" => Ok(Family::Multinode),
            "sprites" => Ok(Family::Sprites),
            _ => Err(format!("expected multinode or sprites, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: Family,
    pub seed: u64,
    pub multinode: MultinodeExperiment,
    pub sprites: SpriteExperiment,
    pub idx_path: Option<PathBuf>,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    resolved: Vec<(&'static str, String)>,
}

struct Entry {
    value: String,
    line: usize,
}

/// Typed access to the raw entries; records each resolved value for the echo.
struct Reader {
    entries: HashMap<String, Entry>,
    source: String,
    resolved: Vec<(&'static str, String)>,
}

impl Reader {
    fn at(&self, key: &str) -> String {
        match self.entries.get(key) {
            Some(e) if e.line == 0 => format!("command line: {key}"),
            Some(e) => format!("{}:{}: {key}", self.source, e.line),
            None => format!("{}: {key} (default)", self.source),
        }
    }

    fn fail(&self, key: &str, msg: impl Display) -> CliError {
        CliError::Config(format!("{}: {msg}", self.at(key)))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn record(&mut self, key: &'static str, value: impl Display) {
        self.resolved.push((key, value.to_string()));
    }

    fn get<T>(&mut self, key: &'static str, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|e| self.fail(key, format!("cannot parse '{s}': {e}")))?,
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    /// `auto` (or absent) resolves to the supplied default.
    fn get_auto<T>(&mut self, key: &'static str, auto: T) -> Result<T, CliError>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            None | Some("auto") => auto,
            Some(s) => s
                .parse::<T>()
                .map_err(|e| self.fail(key, format!("cannot parse '{s}': {e}")))?,
        };
        self.record(key, &v);
        Ok(v)
    }

    /// `none` (or absent) leaves the value unset.
    fn get_opt<T>(&mut self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            None | Some("none") => None,
            Some(s) => Some(
                s.parse::<T>()
                    .map_err(|e| self.fail(key, format!("cannot parse '{s}': {e}")))?,
            ),
        };
        self.record(key, v.as_ref().map_or("none".to_string(), |x| x.to_string()));
        Ok(v)
    }

    fn positive_f64(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        let v: f64 = self.get(key, default)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(self.fail(key, format!("must be a positive number, got {v}")));
        }
        Ok(v)
    }

    fn positive_usize(&mut self, key: &'static str, default: usize) -> Result<usize, CliError> {
        let v: usize = self.get(key, default)?;
        if v == 0 {
            return Err(self.fail(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn list<T>(&mut self, key: &'static str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<T>()
                        .map_err(|e| format!("cannot parse '{}': {e}", p.trim()))
                })
                .collect::<Result<Vec<T>, String>>()
                .map_err(|e| self.fail(key, e))?,
            None => default.to_vec(),
        };
        let shown: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        self.record(key, shown.join(","));
        Ok(v)
    }
}

fn parse_entries(text: &str, source: &str) -> Result<HashMap<String, Entry>, CliError> {
    let mut entries: HashMap<String, Entry> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(CliError::Config(format!(
                "{source}:{line}: expected `key = value`, got '{content}'"
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("{source}:{line}: {key}: unknown key")));
        }
        if let Some(prev) = entries.get(key) {
            return Err(CliError::Config(format!(
                "{source}:{line}: {key}: duplicate key (first set on line {})",
                prev.line
            )));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(entries)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse and validate; `source` names the text in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        Self::parse_with(text, source, None, None)
    }

    /// Like [`parse`](Self::parse), with command-line overrides for the seed
    /// and the output directory applied before validation.
    pub fn parse_with(text: &str, source: &str, seed: Option<u64>, out: Option<&Path>) -> Result<Self, CliError> {
        let mut entries = parse_entries(text, source)?;
        if let Some(seed) = seed {
            entries.insert(
                "seed".into(),
                Entry {
                    value: seed.to_string(),
                    line: 0,
                },
            );
        }
        if let Some(out) = out {
            entries.insert(
                "out_dir".into(),
                Entry {
                    value: out.display().to_string(),
                    line: 0,
                },
            );
        }
        let mut r = Reader {
            entries,
            source: source.to_string(),
            resolved: Vec::new(),
        };
        let mn = MultinodeExperiment::default();
        let sp = SpriteExperiment::default();
        let td = TrainConfig::default();

        let dataset: Family = r.get("dataset", Family::Multinode)?;
        let seed: u64 = r.get("seed", td.seed)?;
        let out_dir: String = r.get("out_dir", "runs/default".to_string())?;
        let out_dir = PathBuf::from(out_dir);
        let data_dir = r.get_auto("data_dir", out_dir.join("data").display().to_string())?;
        let (def_in, def_k) = match dataset {
            Family::Multinode => (mn.input_len, mn.horizon),
            Family::Sprites => (sp.input_len, sp.horizon),
        };
        let input_len = {
            let v = r.get_auto("input_len", def_in)?;
            if v == 0 {
                return Err(r.fail("input_len", "must be at least 1"));
            }
            v
        };
        let horizon = {
            let v = r.get_auto("horizon", def_k)?;
            if v == 0 {
                return Err(r.fail("horizon", "must be at least 1"));
            }
            v
        };

        let mut multinode = mn.clone();
        multinode.input_len = input_len;
        multinode.horizon = horizon;
        multinode.series.seed = seed;
        multinode.series.nodes = r.positive_usize("nodes", mn.series.nodes)?;
        multinode.series.channels = r.positive_usize("channels", mn.series.channels)?;
        multinode.targets = r.list("targets", &mn.targets)?;
        if multinode.targets.is_empty() || multinode.targets.iter().any(|&t| t >= multinode.series.channels) {
            return Err(r.fail(
                "targets",
                format!("must name channels below {}", multinode.series.channels),
            ));
        }
        multinode.series.length = r.positive_usize("length", mn.series.length)?;
        multinode.series.coupling = r.get("coupling", mn.series.coupling)?;
        if !(0.0..=1.0).contains(&multinode.series.coupling) {
            return Err(r.fail("coupling", "must lie in [0, 1]"));
        }
        multinode.series.noise = r.get("noise", mn.series.noise)?;
        if !(multinode.series.noise >= 0.0) {
            return Err(r.fail("noise", "must be non-negative"));
        }
        multinode.stride = r.positive_usize("stride", mn.stride)?;
        let split = r.list("split", &[mn.fractions.0, mn.fractions.1, mn.fractions.2])?;
        if split.len() != 3 || split.iter().any(|f| !(*f >= 0.0)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(r.fail("split", "needs three non-negative fractions summing to 1"));
        }
        multinode.fractions = (split[0], split[1], split[2]);

        let mut sprites = sp.clone();
        sprites.input_len = input_len;
        sprites.horizon = horizon;
        sprites.sprites.seed = seed;
        sprites.sprites.length = input_len + horizon;
        sprites.sprites.height = r.positive_usize("height", sp.sprites.height)?;
        sprites.sprites.width = r.positive_usize("width", sp.sprites.width)?;
        sprites.sprites.sprites = r.get("sprites", sp.sprites.sprites)?;
        sprites.sprites.sprite_size = r.positive_usize("sprite_size", sp.sprites.sprite_size)?;
        if sprites.sprites.sprite_size > sprites.sprites.height.min(sprites.sprites.width) {
            return Err(r.fail("sprite_size", "sprite does not fit the grid"));
        }
        sprites.sprites.speed_min = r.get("speed_min", sp.sprites.speed_min)?;
        sprites.sprites.speed_max = r.get("speed_max", sp.sprites.speed_max)?;
        if sprites.sprites.speed_min > sprites.sprites.speed_max {
            return Err(r.fail("speed_max", "must be at least speed_min"));
        }
        sprites.train_sequences = r.positive_usize("train_sequences", sp.train_sequences)?;
        sprites.val_sequences = r.positive_usize("val_sequences", sp.val_sequences)?;
        sprites.test_sequences = r.positive_usize("test_sequences", sp.test_sequences)?;
        let idx_path = r.get_opt::<String>("idx_path")?.map(PathBuf::from);

        let strategy: Strategy = r.get("strategy", Strategy::TeacherForcing)?;
        let total_iters: usize = r.get("total_iters", td.total_iters)?;
        let desk = desk_schedule(strategy, total_iters);
        let lambda = r.get_auto("lambda", desk.lambda)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(r.fail("lambda", format!("must be a positive number, got {lambda}")));
        }
        let index_aware = r.get_auto("index_aware", desk.index_aware)?;
        let stage1_iters: usize = r.get_auto("stage1_iters", desk.stage1_iters)?;
        if strategy == Strategy::Tpg {
            if stage1_iters == 0 {
                return Err(r.fail("stage1_iters", "strategy = tpg requires stage1_iters >= 1"));
            }
            if stage1_iters >= total_iters {
                return Err(r.fail(
                    "stage1_iters",
                    format!("strategy = tpg requires stage1_iters below total_iters ({total_iters})"),
                ));
            }
            if horizon < 2 {
                return Err(r.fail("horizon", "strategy = tpg requires a horizon of at least 2"));
            }
        }
        let transition_iters = {
            let v = r.get_auto("transition_iters", total_iters.saturating_sub(stage1_iters).max(1))?;
            if v == 0 {
                return Err(r.fail("transition_iters", "must be at least 1"));
            }
            v
        };
        let stage1_lambda = match r.raw("stage1_lambda") {
            None | Some("auto") => {
                let v = (strategy == Strategy::Tpg).then_some(DESK_STAGE1_LAMBDA);
                r.record("stage1_lambda", v.map_or("none".to_string(), |x| x.to_string()));
                v
            }
            Some(_) => r.get_opt::<f64>("stage1_lambda")?,
        };
        if let Some(l) = stage1_lambda {
            if !(l > 0.0) || !l.is_finite() {
                return Err(r.fail("stage1_lambda", format!("must be a positive number, got {l}")));
            }
        }
        let warm_start_m2 = r.get("warm_start_m2", td.warm_start_m2)?;
        let hidden = r.positive_usize("hidden", td.hidden)?;
        let init_scale = r.positive_f64("init_scale", td.init_scale)?;
        let learning_rate = r.positive_f64("learning_rate", td.learning_rate)?;
        let batch_size = r.positive_usize("batch_size", td.batch_size)?;
        let clip_norm = r.positive_f64("clip_norm", td.clip_norm)?;
        let beta1: f64 = r.get("beta1", td.beta1)?;
        if !(beta1 > 0.0 && beta1 < 1.0) {
            return Err(r.fail("beta1", "must lie in (0, 1)"));
        }
        let beta2: f64 = r.get("beta2", td.beta2)?;
        if !(beta2 > 0.0 && beta2 < 1.0) {
            return Err(r.fail("beta2", "must lie in (0, 1)"));
        }
        let eps_adam = r.positive_f64("eps_adam", td.eps_adam)?;
        let val_every = r.positive_usize("val_every", td.val_every)?;
        let parallel: bool = r.get("parallel", true)?;

        let train = TrainConfig {
            schedule: ScheduleConfig {
                strategy,
                lambda,
                index_aware,
                stage1_iters,
                transition_iters,
            },
            stage1_lambda,
            learning_rate,
            batch_size,
            total_iters,
            clip_norm,
            beta1,
            beta2,
            eps_adam,
            warm_start_m2,
            seed,
            hidden,
            init_scale,
            val_every,
            exec: if parallel { Exec::Parallel } else { Exec::Sequential },
        };
        train
            .validate()
            .map_err(|e| CliError::Config(format!("{source}: {e}")))?;

        debug_assert_eq!(r.resolved.len(), KEYS.len());
        let mut resolved = r.resolved;
        resolved.sort_by_key(|(k, _)| KEYS.iter().position(|x| x == k));
        Ok(Self {
            dataset,
            seed,
            multinode,
            sprites,
            idx_path,
            train,
            out_dir,
            data_dir: PathBuf::from(data_dir),
            resolved,
        })
    }

    /// Every key with its resolved value, parseable back into the same config.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn strategy(&self) -> Strategy {
        self.train.schedule.strategy
    }
}
