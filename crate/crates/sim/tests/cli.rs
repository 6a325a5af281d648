use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_byzsgd");

const TINY: &str = r#"
[data]
dim = 3
workers = 2
samples_per_worker = 8
noise_std = 0.5
shift_radius = 1.0

[train]
iterations = 1
mode = "sgd"
batch = 2
eps = 0.0
eps_prime = 0.05
lr_rule = "strongly_convex"

[seeds]
master = 5
"#;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn train(config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn missing_config_exits_one() {
    let out = run(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn bad_usage_exits_one_and_help_exits_zero() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn single_round_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let res = train(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], byzsgd::io::METRICS_HEADER);
    assert!(lines[1].starts_with("1,"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    for key in ["config", "measured", "theoretical", "runs", "wall_clock_secs"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert!(summary["measured"]["lipschitz"].as_f64().unwrap() > 0.0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rerun.toml");
    let text = TINY
        .replace("iterations = 1", "iterations = 20")
        .replace("workers = 2", "workers = 8")
        .replace("eps = 0.0", "eps = 0.2")
        + "\n[attack]\nkind = \"gaussian_noise\"\nscale = 3.0\nmobile = true\n";
    fs::write(&cfg, text).unwrap();
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let res = train(&cfg, &dir.path().join(name), &["--replicates", "3", "--threads", threads]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for file in ["metrics.csv", "metrics_all.csv", "replicates/r2/metrics.csv"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
}

#[test]
fn seed_flag_changes_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY.replace("iterations = 1", "iterations = 5")).unwrap();
    train(&cfg, &dir.path().join("a"), &[]);
    train(&cfg, &dir.path().join("b"), &["--seed", "6"]);
    let a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn invalid_training_setup_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, TINY.replace("batch = 2", "batch = 50")).unwrap();
    assert_eq!(train(&cfg, &dir.path().join("out"), &[]).status.code(), Some(1));
}

#[test]
fn diagnostics_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diag.toml");
    fs::write(
        &cfg,
        "[rge_bench]\nseeds = 3\n[kappa_scan]\nsizes = [32, 64]\nseeds = 2\n[compress_check]\ndraws = 2000\n[concentration]\nseeds = 3\n",
    )
    .unwrap();
    for (cmd, file) in [
        ("rge-bench", "rge_bench.csv"),
        ("kappa-scan", "kappa_scan.csv"),
        ("compress-check", "compress_check.json"),
        ("concentration-check", "concentration.csv"),
    ] {
        let out = dir.path().join(cmd);
        let res = run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(out.join(file).exists(), "{cmd} did not write {file}");
    }
}
