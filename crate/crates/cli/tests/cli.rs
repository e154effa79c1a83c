//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qrqueue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrqueue")).args(args).output().expect("binary runs")
}

fn out_dir(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn reproduce_toys_writes_the_loss_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqueue(&["reproduce-toys", "--out", out_dir(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("toys.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "example,nu1,nu2,g_opt,g_balanced,g_worst,loss_pct");
    let losses: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 3);
    for (got, want) in losses.iter().zip([0.82, 7.96, 0.26]) {
        assert!((got - want).abs() <= 0.05, "{got} vs {want}");
    }
    for ex in ["path_reward", "corner_reward", "realistic"] {
        assert!(dir.path().join(format!("masks_{ex}.csv")).exists());
    }
}

#[test]
fn case_study_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = qrqueue(&[
            "case-study", "--scenario", "nonadversarial", "--algorithm", "sage", "--family", "semi-static",
            "--seeds", "0,1", "--steps", "3000", "--jobs", "2", "--out", out_dir(dir.path()),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 3, "{names:?}");
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn zero_steps_gives_empty_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqueue(&["case-study", "--algorithm", "q-learning", "--seeds", "0", "--steps", "0", "--out", out_dir(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().contains("seed0"))
        .unwrap();
    assert_eq!(fs::read_to_string(log).unwrap().lines().count(), 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqueue(&["case-study", "--algorithm", "sage", "--family", "imbalanced", "--steps", "10", "--out", out_dir(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(qrqueue(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(qrqueue(&["case-study", "--seeds", "x..y"]).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(qrqueue(&["reproduce-toys", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&cfg, "schema_version = 99\n").unwrap();
    assert_eq!(qrqueue(&["reproduce-toys", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn configuration_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            "schema_version = 1\noutput_dir = {:?}\n\n[export_lp]\nvariants = [\"balanced\"]\n\n[export_lp.model]\nkind = \"toy\"\nexample = \"path_reward\"\nnu1 = 0.2\nnu2 = 0.3\n",
            dir.path().join("lp").to_str().unwrap()
        ),
    )
    .unwrap();
    let out = qrqueue(&["export-lp", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(dir.path().join("lp")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1, "{files:?}");
    let text = fs::read_to_string(&files[0]).unwrap();
    assert!(qrqueue::control::LpProblem::parse(&text).is_ok());
}

#[test]
fn verify_core_suite_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqueue(&["verify", "core", "--out", out_dir(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("suite,check,value,bound,passed"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}
