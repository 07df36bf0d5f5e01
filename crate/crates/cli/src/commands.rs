//! The four subcommands. Each writes only below its output directory and
//! returns a short human-readable summary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tpgf_core::data::{load_csv, load_idx_images, read_frames, write_csv, write_frames};
use tpgf_core::experiment::Splits;
use tpgf_core::model::{read_checkpoint, write_checkpoint, Seq2SeqParams};
use tpgf_core::sampling::Strategy;
use tpgf_core::training::{curves_csv, evaluate as evaluate_split, train_scheduled, train_tpg, Evaluation, Split};

use crate::config::{ExperimentConfig, Family};
use crate::error::CliError;

pub const CURVES_FILE: &str = "curves.csv";
pub const EVALUATION_FILE: &str = "evaluate.csv";
pub const ECHO_FILE: &str = "config.txt";
pub const META_FILE: &str = "meta.txt";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_TXT: &str = "comparison.txt";
const PARTS: [&str; 3] = ["train", "val", "test"];

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_echo(cfg: &ExperimentConfig) -> Result<(), CliError> {
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join(ECHO_FILE), &cfg.echo())
}

fn data_file(cfg: &ExperimentConfig, part: &str) -> PathBuf {
    let ext = match cfg.dataset {
        Family::Multinode => "csv",
        Family::Sprites => "frames",
    };
    cfg.data_dir.join(format!("{part}.{ext}"))
}

/// Default checkpoint(s) of a run: `model.ckpt`, or `m1.ckpt`/`m2.ckpt` for TPG.
pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    match cfg.strategy() {
        Strategy::Tpg => cfg.out_dir.join("m2.ckpt"),
        _ => cfg.out_dir.join("model.ckpt"),
    }
}

pub fn generate(cfg: &ExperimentConfig) -> Result<String, CliError> {
    write_echo(cfg)?;
    create_dir(&cfg.data_dir)?;
    let (counts, extra) = match cfg.dataset {
        Family::Multinode => {
            let segments = cfg.multinode.segments()?;
            for (part, seg) in PARTS.iter().zip(&segments) {
                write_csv(seg, &data_file(cfg, part))?;
            }
            let splits = cfg.multinode.from_segments(&segments[0], &segments[1], &segments[2])?;
            (counts(&splits), String::new())
        }
        Family::Sprites => {
            let patterns = match &cfg.idx_path {
                Some(p) => Some(load_idx_images(p)?),
                None => None,
            };
            let seqs = cfg.sprites.sequences(patterns.as_deref())?;
            let grid = (cfg.sprites.sprites.height, cfg.sprites.sprites.width);
            for (part, s) in PARTS.iter().zip(&seqs) {
                write_frames(s, grid, &data_file(cfg, part))?;
            }
            let splits = cfg.sprites.from_sequences(&seqs[0], &seqs[1], &seqs[2])?;
            (counts(&splits), format!("grid = {}x{}\n", grid.0, grid.1))
        }
    };
    let summary = format!(
        "dataset = {}\nseed = {}\ntrain_samples = {}\nval_samples = {}\ntest_samples = {}\n{extra}",
        cfg.dataset, cfg.seed, counts[0], counts[1], counts[2]
    );
    write_text(&cfg.data_dir.join(META_FILE), &summary)?;
    Ok(summary)
}

fn counts(s: &Splits) -> [usize; 3] {
    [s.train.len(), s.val.len(), s.test.len()]
}

/// Rebuild the splits from the files written by [`generate`].
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits, CliError> {
    let paths: Vec<PathBuf> = PARTS.iter().map(|p| data_file(cfg, p)).collect();
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(CliError::Runtime(format!(
            "dataset file {} not found; run `tpgf generate` with this config first",
            missing.display()
        )));
    }
    Ok(match cfg.dataset {
        Family::Multinode => {
            let [a, b, c] = [load_csv(&paths[0])?, load_csv(&paths[1])?, load_csv(&paths[2])?];
            cfg.multinode.from_segments(&a, &b, &c)?
        }
        Family::Sprites => {
            let want = (cfg.sprites.sprites.height, cfg.sprites.sprites.width);
            let mut parts = Vec::with_capacity(3);
            for p in &paths {
                let (seqs, grid) = read_frames(p)?;
                if grid != want {
                    return Err(CliError::Runtime(format!(
                        "{} holds {}x{} frames but the config expects {}x{}",
                        p.display(),
                        grid.0,
                        grid.1,
                        want.0,
                        want.1
                    )));
                }
                parts.push(seqs);
            }
            cfg.sprites.from_sequences(&parts[0], &parts[1], &parts[2])?
        }
    })
}

fn save_checkpoint(p: &Seq2SeqParams, path: &Path) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(p, &mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_evaluation(cfg: &ExperimentConfig, ev: &Evaluation) -> Result<PathBuf, CliError> {
    let path = cfg.out_dir.join(EVALUATION_FILE);
    write_text(&path, &curves_csv(&ev.rows(cfg.train.total_iters as u64, Split::Test)))?;
    Ok(path)
}

fn describe(ev: &Evaluation) -> String {
    let mut s = format!(
        "test rmse = {:.6}\ntest mae = {:.6}\n",
        ev.report.rmse_all, ev.report.mae_all
    );
    if let (Some(ssim), Some(mse)) = (ev.ssim(), ev.mse_per_frame()) {
        s.push_str(&format!("test ssim = {ssim:.6}\ntest mse per frame = {mse:.6}\n"));
    }
    s
}

pub fn train(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let splits = load_splits(cfg)?;
    write_echo(cfg)?;
    let (curves, model, diverged, mut summary) = match cfg.strategy() {
        Strategy::Tpg => {
            let o = train_tpg(&splits.train, &splits.val, Some(&splits.test), &cfg.train)?;
            save_checkpoint(&o.m1, &cfg.out_dir.join("m1.ckpt"))?;
            save_checkpoint(&o.m2, &cfg.out_dir.join("m2.ckpt"))?;
            let s = format!(
                "m1 best iteration = {}\nm2 best iteration = {}\n",
                o.m1_best_iter, o.m2_best_iter
            );
            (o.curves, o.m2, o.diverged_at, s)
        }
        _ => {
            let o = train_scheduled(&splits.train, &splits.val, Some(&splits.test), &cfg.train)?;
            save_checkpoint(&o.params, &cfg.out_dir.join("model.ckpt"))?;
            (
                o.curves,
                o.params,
                o.diverged_at,
                format!("best iteration = {}\n", o.best_iter),
            )
        }
    };
    write_text(&cfg.out_dir.join(CURVES_FILE), &curves_csv(&curves))?;
    if let Some(at) = diverged {
        return Err(CliError::Runtime(format!(
            "training diverged (non-finite loss) at iteration {at}; the best checkpoint so far was kept in {}",
            cfg.out_dir.display()
        )));
    }
    let ev = evaluate_split(&model, &splits.test, cfg.train.exec)?;
    write_evaluation(cfg, &ev)?;
    summary.push_str(&describe(&ev));
    Ok(summary)
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<String, CliError> {
    let path = checkpoint.map_or_else(|| checkpoint_path(cfg), Path::to_path_buf);
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let params =
        read_checkpoint(BufReader::new(f)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let splits = load_splits(cfg)?;
    let meta = &splits.test.meta;
    let d = &params.dims;
    if (d.nodes, d.channels, d.targets.as_slice()) != (meta.nodes, meta.channels, meta.targets.as_slice()) {
        return Err(CliError::Runtime(format!(
            "checkpoint {} expects {} nodes x {} channels with targets {:?}, but the dataset has {} nodes x {} channels with targets {:?}",
            path.display(),
            d.nodes,
            d.channels,
            d.targets,
            meta.nodes,
            meta.channels,
            meta.targets
        )));
    }
    write_echo(cfg)?;
    let ev = evaluate_split(&params, &splits.test, cfg.train.exec)?;
    write_evaluation(cfg, &ev)?;
    Ok(describe(&ev))
}

/// One run's headline test metrics, in file order.
struct RunMetrics {
    label: String,
    metrics: Vec<(String, f64)>,
}

fn is_headline(metric: &str) -> bool {
    metric != "loss" && !metric.contains(".step")
}

fn read_evaluation(cfg: &ExperimentConfig, label: &str) -> Result<RunMetrics, CliError> {
    let path = cfg.out_dir.join(EVALUATION_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Runtime(format!(
            "run '{label}': cannot read {} ({e}); train or evaluate it first",
            path.display()
        ))
    })?;
    let mut metrics = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Runtime(format!("{}:{}: malformed row '{line}'", path.display(), i + 1));
        if cols.len() != 4 {
            return Err(bad());
        }
        if cols[1] == Split::Test.name() && is_headline(cols[2]) {
            metrics.push((cols[2].to_string(), cols[3].parse::<f64>().map_err(|_| bad())?));
        }
    }
    if metrics.is_empty() {
        return Err(CliError::Runtime(format!(
            "run '{label}': {} has no test metrics",
            path.display()
        )));
    }
    Ok(RunMetrics {
        label: label.to_string(),
        metrics,
    })
}

fn higher_is_better(metric: &str) -> bool {
    metric.starts_with("ssim")
}

/// Side-by-side test metrics of several runs; the best cell of every column
/// (all of them, on ties) is flagged.
pub fn compare(configs: &[ExperimentConfig], out: &Path) -> Result<String, CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare needs at least two --config files".into()));
    }
    let mut labels: Vec<String> = Vec::new();
    for c in configs {
        let base = c.strategy().name().to_string();
        let n = labels
            .iter()
            .filter(|l| l.split('#').next() == Some(base.as_str()))
            .count();
        labels.push(if n == 0 { base } else { format!("{base}#{}", n + 1) });
    }
    let runs = configs
        .iter()
        .zip(&labels)
        .map(|(c, l)| read_evaluation(c, l))
        .collect::<Result<Vec<_>, _>>()?;
    let columns: Vec<&str> = runs[0].metrics.iter().map(|(m, _)| m.as_str()).collect();
    for r in &runs[1..] {
        let cols: Vec<&str> = r.metrics.iter().map(|(m, _)| m.as_str()).collect();
        if cols != columns {
            return Err(CliError::Runtime(format!(
                "runs '{}' and '{}' report different metrics ({columns:?} vs {cols:?})",
                runs[0].label, r.label
            )));
        }
    }
    let best: Vec<f64> = (0..columns.len())
        .map(|j| {
            let vals = runs.iter().map(|r| r.metrics[j].1);
            if higher_is_better(columns[j]) {
                vals.fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.fold(f64::INFINITY, f64::min)
            }
        })
        .collect();

    let mut csv = String::from("run,metric,value,best\n");
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("run".to_string())
        .chain(columns.iter().map(|c| c.to_string()))
        .collect()];
    for r in &runs {
        let mut row = vec![r.label.clone()];
        for (j, (m, v)) in r.metrics.iter().enumerate() {
            let is_best = *v == best[j];
            csv.push_str(&format!("{},{m},{v:.16e},{}\n", r.label, u8::from(is_best)));
            row.push(format!("{v:.4}{}", if is_best { "*" } else { " " }));
        }
        cells.push(row);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    text.push_str("* best in column (lower is better; higher for ssim)\n");

    create_dir(out)?;
    write_text(&out.join(COMPARISON_CSV), &csv)?;
    write_text(&out.join(COMPARISON_TXT), &text)?;
    Ok(text)
}
