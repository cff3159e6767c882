use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hardy(args: &[&str], config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hardy"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn hardy")
        .status
        .code()
        .expect("exit code")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn ik_constant_gap_is_four_pi() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(hardy(&["ik"], &configs().join("eq.json"), out.path()), 0);
    let v = json(out.path().join("ik.json"));
    assert_eq!(v["schema"], 1);
    assert!((v["value"].as_f64().unwrap() - 4.0 * PI).abs() < 1e-8, "{v}");
}

#[test]
fn ik_quadratic_contact_reports_divergent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "weights": {"q": "1 - sin(psi)^2"}}"#,
    );
    assert_eq!(hardy(&["ik"], &cfg, dir.path()), 0);
    assert_eq!(json(dir.path().join("ik.json"))["value"], "divergent");
}

#[test]
fn curve_has_requested_points_and_is_nonincreasing() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(hardy(&["curve"], &configs().join("flat.json"), out.path()), 0);
    let csv = fs::read_to_string(out.path().join("curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lambda,mu,residual,iterations"));
    let mus: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(mus.len(), 21);
    assert!(mus.windows(2).all(|w| w[1] <= w[0]), "{mus:?}");
    let gp = fs::read_to_string(out.path().join("curve.gp")).unwrap();
    assert!(gp.contains("curve.csv") && gp.contains("plateau = 1"));
}

#[test]
fn solve_accepts_negative_lambda() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(hardy(&["solve", "--lambda", "-10"], &configs().join("flat.json"), out.path()), 0);
    let v = json(out.path().join("solve.json"));
    assert_eq!(v["lambda"], -10.0);
    assert!(v["mu"].as_f64().unwrap() > 1.0);
    assert!(v["verified_residual"].as_f64().unwrap() < 1e-6);
}

#[test]
fn verify_constructions_passes_at_configured_radius() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(hardy(&["verify-constructions"], &configs().join("flat.json"), out.path()), 0);
    let v = json(out.path().join("constructions.json"));
    for sweep in v["sweeps"].as_array().unwrap() {
        assert_eq!(sweep["violations"], 0, "{sweep}");
    }
    for row in v["flat_residual"].as_array().unwrap() {
        assert!(row["fd_relative_gap"].as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn sweep_outside_collar_exits_with_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"kind": "ball_equator", "beta": 0.05},
            "run": {"beta": 0.5, "eps": [0.0], "samples": 2000}}"#,
    );
    assert_eq!(hardy(&["verify-constructions"], &cfg, dir.path()), 4);
    assert!(dir.path().join("subsolution_eps0.json").exists());
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_field = write_config(dir.path(), r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "run": {"n": 31}}"#);
    assert_eq!(hardy(&["solve"], &bad_field, dir.path()), 2);
    let rejected = write_config(
        dir.path(),
        r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "weights": {"q": "1.5"}}"#,
    );
    assert_eq!(hardy(&["solve"], &rejected, dir.path()), 2);
    let missing = dir.path().join("absent.json");
    assert_eq!(hardy(&["solve"], &missing, dir.path()), 2);
}

#[test]
fn geometry_report_lists_four_rungs() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(hardy(&["verify-geometry"], &configs().join("eq.json"), out.path()), 0);
    let v = json(out.path().join("geometry.json"));
    assert_eq!(v["rungs"].as_array().unwrap().len(), 4);
    assert!(v["max_r2"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn run_dispatches_configured_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "weights": {"q": "0.75"},
            "run": {"command": "ik"}}"#,
    );
    assert_eq!(hardy(&["run"], &cfg, dir.path()), 0);
    assert!(dir.path().join("ik.json").exists());
}
