//! End-to-end CLI flows over the binary: corpus creation, victim training,
//! config handling, evaluation utilities.

use std::path::Path;
use std::process::Command;

fn mex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mex"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn mex");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "command failed\nstdout: {stdout}\nstderr: {stderr}");
    stdout
}

#[test]
fn synth_make_writes_reproducible_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(mex()
            .args(["synth-make", "--total", "32", "--seed", "5", "--out"])
            .arg(out));
    }
    let checksum = |dir: &Path| {
        let text = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
        let map = mex_core::kv::parse(&text).unwrap();
        map["checksum"].clone()
    };
    assert_eq!(checksum(&out_a), checksum(&out_b));
    // loads back with verified checksum and equal variant split
    let (images, man) = mex_core::synth::load_corpus(&out_a).unwrap();
    assert_eq!(images.len(), 32);
    assert_eq!(man.variant_counts, vec![("large".into(), 16), ("small".into(), 16)]);
}

#[test]
fn eval_bound_prints_closed_form() {
    let stdout = run_ok(mex().args([
        "eval", "bound", "--q", "1000", "--delta", "0.1", "--rho", "0",
    ]));
    let value: f64 = stdout.trim().parse().unwrap();
    let expect = 8.0 * 1000.0 * (10_000f64).ln();
    assert!((value - expect).abs() / expect < 1e-9);

    let out = mex()
        .args(["eval", "bound", "--q", "1000", "--delta", "0.1", "--rho", "0.6"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "rho >= 0.5 must fail");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = mex().arg("definitely-not-a-command").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn attack_run_with_missing_config_fails_cleanly() {
    let out = mex()
        .args(["attack", "run", "--config", "missing.cfg", "--out", "/tmp/nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.cfg"), "stderr: {stderr}");
}

#[test]
fn victim_train_and_eval_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("victim.mxvm");
    let stdout = run_ok(mex().args([
        "victim-train",
        "--count",
        "1500",
        "--data-seed",
        "11",
        "--target-acc",
        "0.9",
        "--epochs-cap",
        "6",
        "--seed",
        "3",
        "--out",
        model.to_str().unwrap(),
    ]));
    assert!(stdout.contains("victim holdout accuracy"), "{stdout}");
    let stdout = run_ok(mex().args([
        "eval",
        "accuracy",
        "--victim",
        model.to_str().unwrap(),
        "--count",
        "400",
        "--seed",
        "12",
    ]));
    let acc: f64 = stdout
        .trim()
        .rsplit(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 0.8, "victim accuracy {acc} unexpectedly low");
}

#[test]
fn config_validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "attack.lambda_div = -1\nvictim.model = x.mxvm\n").unwrap();
    let out = mex()
        .args(["attack", "run", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lambda_div"), "stderr: {stderr}");
}

#[test]
fn ledger_log_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("queries.log");
    let ledger_log = mex_core::oracle::LedgerLog::create(&log).unwrap();
    ledger_log.append("init_clone", 100).unwrap();
    ledger_log.append("alternating", 23).unwrap();
    let stdout = run_ok(mex().args([
        "victim-stats",
        "--ledger-log",
        log.to_str().unwrap(),
        "--budget",
        "1000",
    ]));
    assert!(stdout.contains("queries used: 123"), "{stdout}");
    assert!(stdout.contains("init_clone: 100"), "{stdout}");
    assert!(stdout.contains("remaining 877"), "{stdout}");
}
