use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use screengaze::dataset::Dataset;
use screengaze::experiments::{evaluate, CalibrationReport, Variant};
use screengaze::geometry::rotation_angle;
use screengaze::simulator::{direct_projection_baseline, SceneSpec, SceneTruth};
use screengaze::trainer::TrainConfig;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_screengaze"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cli(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

fn read_report(path: &Path) -> CalibrationReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_data(path: &Path) -> Dataset {
    Dataset::read_csv(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_every_row_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "a.csv", "--truth", "ta.json"]);
    ok(d, &["simulate", "--out", "b.csv", "--truth", "tb.json"]);
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
    assert_eq!(fs::read(d.join("ta.json")).unwrap(), fs::read(d.join("tb.json")).unwrap());
    let spec = SceneSpec::default();
    let text = String::from_utf8(a).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(
        text.lines().count() as u32,
        1 + spec.n_subjects * spec.samples_per_subject
    );
    let truth: SceneTruth = serde_json::from_str(&fs::read_to_string(d.join("ta.json")).unwrap()).unwrap();
    assert_eq!(truth.true_pose, spec.true_pose);
}

#[test]
fn simulate_rejects_origins_behind_the_screen() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("spec.json"),
        r#"{"origin_box": {"min": [-100, -80, -50], "max": [100, 80, 650]}}"#,
    )
    .unwrap();
    let out = cli(d, &["simulate", "--spec", "spec.json", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in front of the screen"));
}

#[test]
fn noiseless_calibration_recovers_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_json(&d.join("spec.json"), &SceneSpec::default().noiseless());
    ok(d, &["simulate", "--spec", "spec.json", "--out", "data.csv"]);
    ok(d, &["calibrate", "--data", "data.csv", "--out", "report.json"]);
    let truth: SceneTruth = serde_json::from_str(&fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    let report = read_report(&d.join("report.json"));
    assert_eq!(report.subjects.len(), 3);
    for s in &report.subjects {
        let pose = &s.report.pose;
        let angle = rotation_angle(&(pose.rotation().transpose() * truth.true_pose.rotation()));
        assert!((pose.t - truth.true_pose.t).norm() < 1.0, "{pose:?}");
        assert!(angle.to_degrees() < 0.5, "{angle}");
    }
    let out = ok(d, &["evaluate", "--data", "data.csv", "--report", "report.json"]);
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["overall_mean_mm"].as_f64().unwrap() < 1.0);
}

#[test]
fn too_many_samples_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.csv"]);
    fs::write(d.join("config.json"), r#"{"n_samples": 101}"#).unwrap();
    let out = cli(d, &["calibrate", "--data", "data.csv", "--config", "config.json", "--out", "r.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("101"));
    assert!(!d.join("r.json").exists());
}

#[test]
fn ablation_flags_match_the_proj_variant() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--seed", "3", "--out", "data.csv"]);
    fs::write(d.join("config.json"), r#"{"seed": 3, "epochs": 20, "decay_epoch": 15}"#).unwrap();
    ok(
        d,
        &["calibrate", "--data", "data.csv", "--config", "config.json", "--no-flip", "--no-unc", "--out", "proj.json"],
    );
    let data = read_data(&d.join("data.csv"));
    let config = TrainConfig {
        seed: 3,
        epochs: 20,
        decay_epoch: 15,
        ..TrainConfig::default()
    };
    let expected = screengaze::experiments::calibrate(&data, &Variant::Proj.apply(&config)).unwrap();
    let got = read_report(&d.join("proj.json"));
    for (a, b) in got.subjects.iter().zip(&expected.subjects) {
        assert_eq!(a.report.pose, b.report.pose);
        assert_eq!(a.report.config.w_flip, 0.0);
        assert_eq!(a.report.config.w_unc, 0.0);
    }
}

#[test]
fn evaluate_identity_calibration_equals_the_direct_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.csv"]);
    fs::write(d.join("config.json"), r#"{"epochs": 2, "decay_epoch": 1, "warmup_epochs": 1}"#).unwrap();
    ok(d, &["calibrate", "--data", "data.csv", "--config", "config.json", "--out", "report.json"]);
    let data = read_data(&d.join("data.csv"));
    let mut report = read_report(&d.join("report.json"));
    for s in &mut report.subjects {
        s.report.pose = Default::default();
        s.report.adapter = Default::default();
    }
    let m = evaluate(&data, &report, None).unwrap();
    let baseline = direct_projection_baseline(&data, &Default::default());
    assert!((m.overall_mean_mm - baseline.overall_mean_mm).abs() < 1e-12);

    let truth: SceneTruth = serde_json::from_str(&fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    let noiseless = screengaze::simulator::generate(&SceneSpec::default().noiseless()).unwrap().dataset();
    for s in &mut report.subjects {
        s.report.pose = truth.true_pose;
    }
    assert!(evaluate(&noiseless, &report, None).unwrap().overall_mean_mm < 1e-9);
}

#[test]
fn known_pose_keeps_the_screen_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.csv"]);
    fs::write(d.join("config.json"), r#"{"epochs": 10, "decay_epoch": 8}"#).unwrap();
    ok(
        d,
        &["calibrate", "--data", "data.csv", "--config", "config.json", "--known-pose", "truth.json", "--out", "r.json"],
    );
    let truth: SceneTruth = serde_json::from_str(&fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    for s in read_report(&d.join("r.json")).subjects {
        assert_eq!(s.report.pose, truth.true_pose);
    }
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.csv"]);
    let text = fs::read_to_string(d.join("data.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen("train", "validation", 1);
    fs::write(d.join("bad.csv"), lines.join("\n") + "\n").unwrap();
    let out = cli(d, &["calibrate", "--data", "bad.csv", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["calibrate"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let missing = cli(dir.path(), &["evaluate", "--data", "nope.csv", "--report", "nope.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sweep_rows_and_timing_column() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.csv"]);
    fs::write(d.join("config.json"), r#"{"epochs": 3, "decay_epoch": 2, "warmup_epochs": 1}"#).unwrap();
    ok(d, &["sweep", "--data", "data.csv", "--config", "config.json", "--trials", "1", "--out", "s.csv"]);
    let text = fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().next().unwrap(), "n_train,trial,mean_error_mm");
    ok(
        d,
        &["sweep", "--data", "data.csv", "--config", "config.json", "--n-list", "3", "--trials", "2", "--timing", "--out", "t.csv"],
    );
    let text = fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(text.starts_with("n_train,trial,mean_error_mm,wall_seconds\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn trajectory_command_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out", "data.csv"]);
    ok(d, &["calibrate", "--data", "data.csv", "--out", "r.json", "--trajectory", "traj.csv"]);
    let out = ok(
        d,
        &["trajectory", "--data", "data.csv", "--truth", "truth.json", "--trajectory", "traj.csv", "--out", "dist.csv", "--max-ratio", "0.2"],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("samples=30"));
    let strict = cli(
        d,
        &["trajectory", "--data", "data.csv", "--truth", "truth.json", "--trajectory", "traj.csv", "--out", "dist.csv", "--max-ratio", "0.001"],
    );
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["gradcheck"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("PASS").count(), 3);
    for c in ["projection", "adapter", "composite"] {
        let out = cli(d, &["gradcheck", "--states", "50", "--corrupt", c]);
        assert_eq!(out.status.code(), Some(1), "{c}");
    }
}
