use tpgf_core::data::{windowize, ChannelStats, Dataset};
use tpgf_core::experiment::MultinodeExperiment;
use tpgf_core::model::{closed_loop, ForecastRequest, Seq2SeqParams};
use tpgf_core::sampling::{ScheduleConfig, Strategy};
use tpgf_core::training::{
    composite_loss, curves_csv, evaluate, evaluate_predictions, half_timescale_dataset, train_scheduled, train_tpg,
    Split, TrainConfig,
};
use tpgf_core::{Error, Exec, SeqTensor};

/// Two coupled oscillators per node: `x_{t+1} = R(θ) x_t` with a slow decay,
/// restarted from a fresh phase every 40 steps.
fn linear_system(len: usize) -> SeqTensor {
    let (nodes, theta, decay) = (2, 0.3f64, 0.995);
    let mut data = Vec::with_capacity(len * nodes * 2);
    let mut state: Vec<[f64; 2]> = (0..nodes).map(|n| [1.0, n as f64 * 0.5]).collect();
    for t in 0..len {
        if t % 40 == 0 {
            let phase = t as f64 * 0.37;
            for (n, s) in state.iter_mut().enumerate() {
                *s = [(phase + n as f64).cos(), (phase + n as f64).sin()];
            }
        }
        for s in &mut state {
            data.extend_from_slice(s);
            let [a, b] = *s;
            *s = [
                decay * (theta.cos() * a - theta.sin() * b),
                decay * (theta.sin() * a + theta.cos() * b),
            ];
        }
    }
    SeqTensor::new(&[len, nodes, 2], data).unwrap()
}

fn linear_splits() -> (Dataset, Dataset) {
    let series = linear_system(400);
    let train = windowize(
        &series.slice_time(&(0..320).collect::<Vec<_>>()).unwrap(),
        6,
        4,
        1,
        &[0, 1],
    )
    .unwrap();
    let val = windowize(
        &series.slice_time(&(320..400).collect::<Vec<_>>()).unwrap(),
        6,
        4,
        1,
        &[0, 1],
    )
    .unwrap();
    let stats = ChannelStats::fit(&train).unwrap();
    (train.normalized(&stats).unwrap(), val.normalized(&stats).unwrap())
}

fn small_cfg(schedule: ScheduleConfig, iters: usize) -> TrainConfig {
    TrainConfig {
        schedule,
        total_iters: iters,
        batch_size: 8,
        hidden: 8,
        seed: 7,
        val_every: 25,
        ..TrainConfig::default()
    }
}

fn mean_loss(p: &Seq2SeqParams, data: &Dataset) -> f64 {
    data.samples
        .iter()
        .map(|s| {
            let pred = closed_loop(
                &ForecastRequest::new(s.context.clone(), s.target.time_len()).unwrap(),
                p,
            )
            .unwrap();
            composite_loss(&pred, &s.target).unwrap().0
        })
        .sum::<f64>()
        / data.len() as f64
}

#[test]
fn zero_iterations_leave_params_at_init() {
    let (train, val) = linear_splits();
    let a = train_scheduled(&train, &val, None, &small_cfg(ScheduleConfig::teacher_forcing(), 0)).unwrap();
    let b = train_scheduled(&train, &val, None, &small_cfg(ScheduleConfig::teacher_forcing(), 0)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_iter, 0);
    // Only the initial validation point is recorded.
    assert!(a.curves.iter().all(|r| r.iter == 0 && r.split == Split::Val));
}

#[test]
fn every_strategy_reduces_training_loss() {
    let (train, val) = linear_splits();
    let initial = train_scheduled(&train, &val, None, &small_cfg(ScheduleConfig::teacher_forcing(), 0)).unwrap();
    let before = mean_loss(&initial.params, &train);
    let runs = [
        ScheduleConfig::teacher_forcing(),
        ScheduleConfig::scheduled_sampling(50.0),
        ScheduleConfig::tpg(25.0, 150, 350),
    ];
    for schedule in runs {
        let strategy = schedule.strategy;
        let cfg = small_cfg(schedule, 500);
        let params = if strategy == Strategy::Tpg {
            train_tpg(&train, &val, None, &cfg).unwrap().m2
        } else {
            train_scheduled(&train, &val, None, &cfg).unwrap().params
        };
        let after = mean_loss(&params, &train);
        assert!(after < before, "{}: {after} !< {before}", strategy.name());
    }
}

#[test]
fn same_seed_same_curves_across_executors() {
    let (train, val) = linear_splits();
    let cfg = small_cfg(ScheduleConfig::scheduled_sampling(20.0), 40);
    let a = train_scheduled(&train, &val, Some(&val), &cfg).unwrap();
    let b = train_scheduled(&train, &val, Some(&val), &cfg).unwrap();
    let seq = train_scheduled(
        &train,
        &val,
        Some(&val),
        &TrainConfig {
            exec: Exec::Sequential,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(curves_csv(&a.curves), curves_csv(&b.curves));
    assert_eq!(curves_csv(&a.curves), curves_csv(&seq.curves));
    assert_eq!(a.params, seq.params);

    let other = train_scheduled(&train, &val, None, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn tpg_is_deterministic_and_records_both_stages() {
    let (train, val) = linear_splits();
    let cfg = small_cfg(ScheduleConfig::tpg(10.0, 30, 30), 60);
    let a = train_tpg(&train, &val, None, &cfg).unwrap();
    let b = train_tpg(
        &train,
        &val,
        None,
        &TrainConfig {
            exec: Exec::Sequential,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(curves_csv(&a.curves), curves_csv(&b.curves));
    assert_eq!(a.m2, b.m2);
    assert!(a.curves.iter().any(|r| r.metric == "m1.loss"));
    assert!(a.curves.iter().any(|r| r.metric == "m2.loss" && r.iter == 60));
}

#[test]
fn tpg_preconditions() {
    let (train, val) = linear_splits();
    let mut bad = small_cfg(ScheduleConfig::tpg(10.0, 1, 10), 20);
    bad.schedule.stage1_iters = 0;
    assert!(matches!(train_tpg(&train, &val, None, &bad), Err(Error::Config(_))));

    let series = linear_system(60);
    let short = windowize(&series, 6, 1, 1, &[0]).unwrap();
    let cfg = small_cfg(ScheduleConfig::tpg(10.0, 5, 10), 20);
    assert!(matches!(train_tpg(&short, &short, None, &cfg), Err(Error::Config(_))));

    let ss = small_cfg(ScheduleConfig::scheduled_sampling(10.0), 5);
    assert!(matches!(train_tpg(&train, &val, None, &ss), Err(Error::Config(_))));
    let tpg = small_cfg(ScheduleConfig::tpg(10.0, 5, 10), 20);
    assert!(matches!(
        train_scheduled(&train, &val, None, &tpg),
        Err(Error::Config(_))
    ));
}

#[test]
fn half_timescale_horizons_for_k12() {
    let data = MultinodeExperiment::default().build().unwrap();
    let half = half_timescale_dataset(&data.val).unwrap();
    assert_eq!(half.len(), 2 * data.val.len());
    assert_eq!(half.meta.horizon, 6);
    for s in &half.samples {
        assert_eq!(s.target.time_len(), 6);
        assert_eq!(s.context.time_len(), 12);
    }
}

#[test]
fn evaluation_oracles() {
    let data = MultinodeExperiment::default().build().unwrap();
    let targets: Vec<SeqTensor> = data.train.samples.iter().map(|s| s.target.clone()).collect();
    let perfect = evaluate_predictions(&targets, &data.train).unwrap();
    assert_eq!(perfect.report.rmse_all, 0.0);
    assert_eq!(perfect.report.mae_all, 0.0);

    // Targets are z-scored with training statistics, so predicting zero
    // everywhere scores an RMSE of about one standard deviation.
    let zeros: Vec<SeqTensor> = targets.iter().map(|t| SeqTensor::zeros(t.shape())).collect();
    let zero = evaluate_predictions(&zeros, &data.train).unwrap();
    assert!((zero.report.rmse_all - 1.0).abs() < 0.05, "{}", zero.report.rmse_all);
    assert_eq!(zero.rmse_by_step.len(), 12);
    assert!(zero.ssim().is_none());

    let p = Seq2SeqParams::init(
        tpgf_core::model::ModelDims {
            hidden: 4,
            nodes: 10,
            channels: 9,
            targets: vec![0, 1, 2],
        },
        0.1,
        &mut tpgf_core::RngState::new(3),
    )
    .unwrap();
    let a = evaluate(&p, &data.test, Exec::Parallel).unwrap();
    let b = evaluate(&p, &data.test, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    let rows = a.rows(7, Split::Test);
    assert!(rows.iter().any(|r| r.metric == "rmse.ch0"));
    assert!(rows.iter().any(|r| r.metric == "rmse.step12"));

    let empty = Dataset {
        samples: vec![],
        meta: data.test.meta.clone(),
    };
    assert!(matches!(evaluate(&p, &empty, Exec::Sequential), Err(Error::Config(_))));
}
