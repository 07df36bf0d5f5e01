//! Train teacher forcing, scheduled sampling and TPG on the multinode
//! fixture and print closed-loop test metrics.
//!
//! `cargo run --release -p tpgf-core --example compare_strategies -- [seed] [iters] [ss_lambda] [tpg_lambda] [stage1] [batch] [stage1_lambda]`
//!
//! `STRATEGIES=a,b` restricts the runs; `NOISE=x` overrides the fixture noise.

use std::time::Instant;

use tpgf_core::experiment::{
    MultinodeExperiment, DESK_SS_LAMBDA, DESK_STAGE1_ITERS, DESK_STAGE1_LAMBDA, DESK_TPG_LAMBDA,
};
use tpgf_core::sampling::ScheduleConfig;
use tpgf_core::training::{evaluate, train_scheduled, train_tpg, MetricsRow, Split, TrainConfig};

/// First validation point at or below `level` for metric `name`.
fn first_reaching(curves: &[MetricsRow], name: &str, level: f64) -> Option<u64> {
    curves
        .iter()
        .find(|r| r.split == Split::Val && r.metric == name && r.value <= level)
        .map(|r| r.iter)
}

fn last_val(curves: &[MetricsRow], name: &str) -> f64 {
    curves
        .iter()
        .rev()
        .find(|r| r.split == Split::Val && r.metric == name)
        .map_or(f64::NAN, |r| r.value)
}

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> tpgf_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = arg(&args, 1, 1);
    let iters: usize = arg(&args, 2, 2000);
    let ss_lambda: f64 = arg(&args, 3, DESK_SS_LAMBDA);
    let tpg_lambda: f64 = arg(&args, 4, DESK_TPG_LAMBDA);
    let stage1: usize = arg(&args, 5, DESK_STAGE1_ITERS);
    let batch: usize = arg(&args, 6, 32);
    let only = std::env::var("STRATEGIES").unwrap_or_default();

    let mut experiment = MultinodeExperiment::default().with_seed(seed);
    if let Some(noise) = std::env::var("NOISE").ok().and_then(|v| v.parse().ok()) {
        experiment.series.noise = noise;
    }
    let data = experiment.build()?;
    let base = TrainConfig {
        seed,
        total_iters: iters,
        batch_size: batch,
        stage1_lambda: Some(arg(&args, 7, DESK_STAGE1_LAMBDA)),
        ..TrainConfig::default()
    };
    let runs = [
        ("teacher_forcing", ScheduleConfig::teacher_forcing()),
        ("scheduled_sampling", ScheduleConfig::scheduled_sampling(ss_lambda)),
        ("tpg", ScheduleConfig::tpg(tpg_lambda, stage1, iters - stage1)),
    ];
    let mut baseline_level = None;
    for (name, schedule) in runs {
        if !only.is_empty() && !only.split(',').any(|o| o == name) {
            continue;
        }
        let cfg = TrainConfig {
            schedule,
            ..base.clone()
        };
        let t0 = Instant::now();
        let (params, best, note) = if name == "tpg" {
            let o = train_tpg(&data.train, &data.val, None, &cfg)?;
            let reach = baseline_level.map(|l| first_reaching(&o.curves, "m1.loss", l));
            (
                o.m2,
                o.m2_best_iter,
                format!(
                    "m1 reaches baseline level at {reach:?}, m1 final val {:.4}",
                    last_val(&o.curves, "m1.loss")
                ),
            )
        } else {
            let o = train_scheduled(&data.train, &data.val, None, &cfg)?;
            let level = last_val(&o.curves, "loss");
            if name == "scheduled_sampling" {
                baseline_level = Some(level);
            }
            let first = first_reaching(&o.curves, "loss", level);
            (
                o.params,
                o.best_iter,
                format!("final val {level:.4} first reached at {first:?}"),
            )
        };
        let ev = evaluate(&params, &data.test, cfg.exec)?;
        let k = ev.rmse_by_step.len();
        println!(
            "{name:>20}  rmse {:.4}  mae {:.4}  step1 {:.4}  stepK {:.4}  ratio {:.3}  best@{best}  {:.1}s  {note}",
            ev.report.rmse_all,
            ev.report.mae_all,
            ev.rmse_by_step[0],
            ev.rmse_by_step[k - 1],
            ev.rmse_by_step[k - 1] / ev.rmse_by_step[0],
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
