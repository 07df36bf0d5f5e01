use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tpgf_cli::config::KEYS;

const SMALL: &str = "\
nodes = 3
channels = 4
targets = 0,2
length = 260
input_len = 8
horizon = 4
hidden = 6
batch_size = 4
total_iters = 50
val_every = 10
";

fn tpgf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpgf"))
        .args(args)
        .env("TPGF_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes `body` as a config whose out_dir is `dir/name`.
fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.cfg"));
    let out = dir.join(name);
    fs::write(&path, format!("{body}out_dir = {}\n", out.display())).unwrap();
    path
}

fn run(cmd: &str, cfg: &Path) -> Output {
    tpgf(&[cmd, "--config", cfg.to_str().unwrap()])
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn empty_config_echoes_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    fs::write(&cfg, "").unwrap();
    let out_dir = dir.path().join("out");
    ok(&tpgf(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let echo = fs::read_to_string(out_dir.join("config.txt")).unwrap();
    for k in KEYS {
        assert!(
            echo.lines().any(|l| l.starts_with(&format!("{k} = "))),
            "echo lacks {k}"
        );
    }
    for part in ["train", "val", "test"] {
        assert!(out_dir.join("data").join(format!("{part}.csv")).exists());
    }
}

#[test]
fn generate_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(
        dir.path(),
        "a",
        "length = 1050\ninput_len = 24\nhorizon = 12\nstride = 10\n",
    );
    let b = config(
        dir.path(),
        "b",
        "length = 1050\ninput_len = 24\nhorizon = 12\nstride = 10\n",
    );
    let summary = ok(&run("generate", &a));
    ok(&run("generate", &b));
    // 1050-length series, 36-step windows every 10 steps: 102 windows.
    // 0.8/0.1/0.1 → 82 train; val and test lose the windows overlapping
    // the previous partition.
    assert!(summary.contains("train_samples = 82"), "{summary}");
    let val: usize = summary
        .lines()
        .find_map(|l| l.strip_prefix("val_samples = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(val > 0 && val <= 10);
    for f in ["train.csv", "val.csv", "test.csv", "meta.txt"] {
        assert_eq!(
            read(dir.path().join("a/data").join(f)),
            read(dir.path().join("b/data").join(f)),
            "{f}"
        );
    }
}

#[test]
fn sprite_frames_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "s",
        "dataset = sprites\nheight = 12\nwidth = 14\ninput_len = 5\nhorizon = 5\ntrain_sequences = 3\nval_sequences = 2\ntest_sequences = 2\n",
    );
    ok(&run("generate", &cfg));
    let bytes = read(dir.path().join("s/data/train.frames"));
    assert_eq!(&bytes[..8], b"TPGFFRMS");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    let field = |i: usize| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().unwrap());
    assert_eq!((field(0), field(1), field(2), field(3)), (10, 12, 14, 3));
    assert_eq!(bytes.len(), 12 + 32 + 3 * 10 * 12 * 14 * 8);
}

#[test]
fn teacher_forcing_smoke_run_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "tf", SMALL);
    ok(&run("generate", &cfg));
    ok(&run("train", &cfg));
    let run_dir = dir.path().join("tf");
    let curves = fs::read_to_string(run_dir.join("curves.csv")).unwrap();
    assert!(curves.starts_with("iter,split,metric,value\n"));
    let val_rows = curves.lines().filter(|l| l.contains(",val,loss,")).count();
    let test_rows = curves.lines().filter(|l| l.contains(",test,loss,")).count();
    assert_eq!(val_rows, 50 / 10 + 1);
    assert_eq!(test_rows, val_rows);

    let first: Vec<Vec<u8>> = ["curves.csv", "model.ckpt", "evaluate.csv"]
        .iter()
        .map(|f| read(run_dir.join(f)))
        .collect();
    ok(&run("train", &cfg));
    let second: Vec<Vec<u8>> = ["curves.csv", "model.ckpt", "evaluate.csv"]
        .iter()
        .map(|f| read(run_dir.join(f)))
        .collect();
    assert_eq!(first, second);

    // Re-evaluating the saved checkpoint reproduces the post-training evaluation.
    ok(&run("evaluate", &cfg));
    assert_eq!(read(run_dir.join("evaluate.csv")), first[2]);
    let eval = fs::read_to_string(run_dir.join("evaluate.csv")).unwrap();
    let steps = eval.lines().filter(|l| l.contains(",test,rmse.step")).count();
    assert_eq!(steps, 4);
}

#[test]
fn tpg_writes_both_checkpoints_and_stage_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "tpg",
        &format!("{SMALL}strategy = tpg\nstage1_iters = 20\nlambda = 5\n"),
    );
    ok(&run("generate", &cfg));
    ok(&run("train", &cfg));
    let d = dir.path().join("tpg");
    assert!(d.join("m1.ckpt").exists() && d.join("m2.ckpt").exists());
    let curves = fs::read_to_string(d.join("curves.csv")).unwrap();
    assert!(curves.contains(",val,m1.loss,") && curves.contains(",val,m2.loss,"));
}

#[test]
fn exit_codes_and_error_messages() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(dir.path(), "bad", "strategy = scheduled_sampling\nlambda = -1\n");
    let out = run("train", &bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda"), "{}", stderr(&out));

    let cross = config(dir.path(), "cross", "strategy = tpg\nstage1_iters = 0\n");
    let out = run("generate", &cross);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stage1_iters"));

    let missing = config(dir.path(), "missing", SMALL);
    let out = run("train", &missing);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("tpgf generate"), "{}", stderr(&out));

    assert_eq!(tpgf(&["train"]).status.code(), Some(2));
    assert_eq!(
        tpgf(&["train", "--config", "/nonexistent/x.cfg"]).status.code(),
        Some(2)
    );
}

#[test]
fn evaluate_rejects_tampered_and_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "m", SMALL);
    ok(&run("generate", &cfg));
    ok(&run("train", &cfg));
    let ckpt = dir.path().join("m/model.ckpt");

    let mut bytes = read(&ckpt);
    bytes[0] ^= 0xFF;
    let tampered = dir.path().join("tampered.ckpt");
    fs::write(&tampered, bytes).unwrap();
    let out = tpgf(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        tampered.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).to_lowercase().contains("magic"), "{}", stderr(&out));

    let other = config(dir.path(), "other", &SMALL.replace("nodes = 3", "nodes = 5"));
    ok(&run("generate", &other));
    let out = tpgf(&[
        "evaluate",
        "--config",
        other.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("3 nodes") && stderr(&out).contains("5 nodes"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn compare_tables() {
    let dir = tempfile::tempdir().unwrap();
    let shared = format!("{SMALL}data_dir = {}\n", dir.path().join("data").display());
    let tf = config(dir.path(), "tf", &shared);
    let tf2 = config(dir.path(), "tf2", &shared);
    let ss = config(
        dir.path(),
        "ss",
        &format!("{shared}strategy = scheduled_sampling\nlambda = 10\n"),
    );
    let tpg = config(
        dir.path(),
        "tpg",
        &format!("{shared}strategy = tpg\nstage1_iters = 20\nlambda = 5\n"),
    );
    ok(&run("generate", &tf));
    for c in [&tf, &tf2, &ss, &tpg] {
        ok(&run("train", c));
    }
    let table_dir = dir.path().join("table");
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let out = ok(&tpgf(&[
        "compare",
        "--config",
        &s(&tf),
        "--config",
        &s(&tf2),
        "--out",
        &s(&table_dir),
    ]));
    let csv = fs::read_to_string(table_dir.join("comparison.csv")).unwrap();
    assert!(
        csv.lines().skip(1).all(|l| l.ends_with(",1")),
        "identical runs tie everywhere:\n{csv}"
    );
    let rows: Vec<&str> = out.lines().skip(1).take(2).collect();
    assert_eq!(
        rows[0].trim_start_matches("teacher_forcing").trim(),
        rows[1].trim_start_matches("teacher_forcing#2").trim()
    );

    let out = ok(&tpgf(&[
        "compare",
        "--config",
        &s(&tf),
        "--config",
        &s(&ss),
        "--config",
        &s(&tpg),
        "--out",
        &s(&table_dir),
    ]));
    let lines: Vec<&str> = out.lines().collect();
    for col in ["rmse.ch0", "rmse.ch2", "mae.ch0", "mae.ch2"] {
        assert!(lines[0].contains(col), "{}", lines[0]);
    }
    assert!(
        lines[1].starts_with("teacher_forcing")
            && lines[2].starts_with("scheduled_sampling")
            && lines[3].starts_with("tpg")
    );
    assert!(fs::read_to_string(table_dir.join("comparison.txt"))
        .unwrap()
        .contains('*'));

    let never = config(dir.path(), "never", &shared);
    let out = tpgf(&[
        "compare",
        "--config",
        &s(&tf),
        "--config",
        &s(&never),
        "--out",
        &s(&table_dir),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("evaluate.csv"), "{}", stderr(&out));
}
