use std::path::Path;
use std::process::{Command, Output};

use kneereg::experiment::{read_json, EvaluationReport, ExperimentConfig, SUMMARY_FILE};
use kneereg::projector::ProjectionGeometry;

fn kneereg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kneereg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn kneereg")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = kneereg(out, args);
    assert!(
        o.status.success(),
        "kneereg {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Default config with a coarse detector so tracking stays quick.
fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.geometry = ProjectionGeometry::lateral(600.0, 1000.0, 128, 128, 2.4);
    cfg.trajectory.frames = 2;
    cfg.trajectory.max_flexion_deg = 4.0;
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn phantom_and_simulate_write_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let listed = ok(dir.path(), &["--config", &cfg, "phantom"]);
    assert!(listed.contains("volume.vol"));
    for f in ["volume.vol", "landmarks.json", "femur.mask"] {
        assert!(dir.path().join("phantom").join(f).exists(), "{f}");
    }
    ok(dir.path(), &["--config", &cfg, "simulate"]);
    assert!(dir.path().join("frames/frame_001_femur.drr").exists());
    assert!(dir.path().join("frames/ground_truth.json").exists());
    let run: serde_json::Value = read_json(&dir.path().join("run.json")).unwrap();
    assert_eq!(run["command"], "simulate");
}

#[test]
fn phantom_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["--seed", "7", "phantom"]);
    ok(b.path(), &["--seed", "7", "--threads", "2", "phantom"]);
    for f in ["volume.vol", "landmarks.json", "femur.mask", "patella.mask"] {
        let x = std::fs::read(a.path().join("phantom").join(f)).unwrap();
        let y = std::fs::read(b.path().join("phantom").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.phantom.dims = [0, 128, 128];
    let p = dir.path().join("bad.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = kneereg(dir.path(), &["--config", p.to_str().unwrap(), "phantom"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(!err["message"].as_str().unwrap().is_empty());

    std::fs::write(&p, "{ not json").unwrap();
    let o = kneereg(dir.path(), &["--config", p.to_str().unwrap(), "phantom"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    ok(dir.path(), &["--config", &cfg, "phantom"]);
    ok(dir.path(), &["--config", &cfg, "simulate"]);
    let gt = dir.path().join("frames/ground_truth.json");
    // scored in a fresh dir, reading the phantom from the first one
    let mut c: ExperimentConfig = read_json(Path::new(&cfg)).unwrap();
    c.paths.phantom = Some(dir.path().join("phantom"));
    let cfg2 = dir.path().join("eval.json");
    std::fs::write(&cfg2, serde_json::to_string(&c).unwrap()).unwrap();
    let eval_dir = dir.path().join("eval");
    let gt = gt.to_str().unwrap();
    ok(
        &eval_dir,
        &["--config", cfg2.to_str().unwrap(), "evaluate", "--estimate", gt, "--ground-truth", gt],
    );
    let r: EvaluationReport = read_json(&eval_dir.join(SUMMARY_FILE)).unwrap();
    assert_eq!(r.overall.rsr_percent, 100.0);
    assert_eq!(r.overall.mean_tre_mm, 0.0);
    assert!(eval_dir.join("metrics.txt").exists());
}

fn tracked_summary(no_kpm: bool) -> EvaluationReport {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut flags = vec!["--config", cfg.as_str()];
    if no_kpm {
        flags.push("--no-kpm");
    }
    for cmd in ["phantom", "simulate", "track", "evaluate", "kinematics"] {
        let mut args = flags.clone();
        args.push(cmd);
        ok(dir.path(), &args);
    }
    assert!(dir.path().join("kinematics.csv").exists());
    read_json(&dir.path().join(SUMMARY_FILE)).unwrap()
}

#[test]
fn tracking_routes_follow_kpm_switch() {
    let with_kpm = tracked_summary(false);
    let without_kpm = tracked_summary(true);
    assert_eq!(with_kpm.overall.rsr_percent, 100.0);
    let (with, without) = (with_kpm.diagnostics.unwrap(), without_kpm.diagnostics.unwrap());
    assert_eq!(with.frames, 2);
    assert_eq!(with.global_registrations, 3);
    assert_eq!(with.kinematic_registrations, 3);
    assert_eq!(without.global_registrations, 6);
    assert_eq!(without.kinematic_registrations, 0);
    assert!(with.objective_evaluations < without.objective_evaluations);
}
