use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn udgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udgen"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn udgen")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = udgen(dir, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}\n{}\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(udgen(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(udgen(dir.path(), &["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(udgen(dir.path(), &["synth", "--noise", "abc"]).status.code(), Some(1));
    assert_eq!(udgen(dir.path(), &["synth", "--labeled-fraction", "0"]).status.code(), Some(1));
    assert_eq!(udgen(dir.path(), &["--help"]).status.code(), Some(0));
    let o = udgen(dir.path(), &["sample", "--policy", "greedy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("greedy"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 3\nunknown_key = 1\n").unwrap();
    let o = udgen(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown_key"));
    fs::write(&cfg, "seed 3\n").unwrap();
    assert_eq!(udgen(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]).status.code(), Some(1));
}

#[test]
fn missing_prerequisites_exit_two_and_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = udgen(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset"));
    ok(dir.path(), &["synth", "--per-combination", "2"]);
    let o = udgen(dir.path(), &["embed"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model checkpoint"));
    let o = udgen(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch manifest"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nseed = 5\nper_combination = 2   # per (content, style)\n").unwrap();
    let out = ok(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert!(out.contains("root seed: 5"));
    assert!(out.contains("wrote 24 patches"));
    let out = ok(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "6", "synth", "--per-combination", "3"]);
    assert!(out.contains("root seed: 6"));
    assert!(out.contains("wrote 36 patches"));
}

#[test]
fn synth_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--per-combination", "2"]);
    let first = fs::read(dir.path().join("data/manifest.json")).unwrap();
    let patch = fs::read(dir.path().join("data/patch_00007.ppm")).unwrap();
    ok(dir.path(), &["synth", "--per-combination", "2"]);
    assert_eq!(fs::read(dir.path().join("data/manifest.json")).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("data/patch_00007.ppm")).unwrap(), patch);
}

#[test]
fn short_pipeline_runs_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["--seed", "2", "synth", "--per-combination", "4"][..],
        &["--seed", "2", "train", "--steps", "30"],
        &["--seed", "2", "embed"],
        &["--seed", "2", "cluster"],
    ] {
        assert!(ok(d, args).contains("root seed: 2"));
    }
    let o = udgen(d, &["--seed", "2", "sample", "--policy", "mixed", "--count", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("uncertainty table"));
    assert!(!d.join("batch").exists());

    let out = ok(d, &["--seed", "2", "sample", "--policy", "random_cm", "--count", "10"]);
    assert!(out.starts_with("root seed: 2\n"));
    ok(d, &["--seed", "2", "uncertainty", "--seg-steps", "50"]);
    let out = ok(d, &["--seed", "2", "sample", "--policy", "mixed", "--count", "10"]);
    assert!(out.contains("policy: mixed"));
    let manifest = fs::read_to_string(d.join("batch/manifest.json")).unwrap();
    assert!(manifest.contains("\"root_seed\": 2"));
    assert!(d.join("batch/example_000009.ppm").exists());
    assert!(d.join("batch/example_000009.pgm").exists());
    let before = fs::read(d.join("batch/report.json")).unwrap();
    let out = ok(d, &["report"]);
    assert!(out.starts_with("root seed: 2\n"));
    assert_eq!(fs::read(d.join("batch/report.json")).unwrap(), before);
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--seed", "4", "gradcheck", "--seeds", "1"]);
    assert!(out.contains("root seed: 4"));
    assert!(out.contains("all gradient checks below 1e-4"));
}
