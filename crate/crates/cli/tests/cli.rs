use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn coflow(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coflow"))
        .args(args)
        .env("COFLOW_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a variant of the reproduction config with one line replaced.
fn variant(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = std::fs::read_to_string(config("reproduction.toml")).unwrap();
    assert!(text.contains(from), "{from}");
    let path = dir.join("variant.toml");
    std::fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn reproduction_config_writes_all_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &["run", config("reproduction.toml").to_str().unwrap()],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = root.path().join("output/reproduction");
    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 401);
    assert!(traj.starts_with(
        "t,x_1,x_2,x_3,xdot_1,xdot_2,xdot_3,dist_to_reference,norm_xdot,norm_yosida\n"
    ));
    let diag = std::fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with(
        "t,energy,gap_sq,operator_sq,residual_position,residual_velocity,residual_operator\n"
    ));

    let summary = json(&dir.join("summary.json"));
    assert!(
        summary["final_state"]["dist_to_reference"]
            .as_f64()
            .unwrap()
            < 0.05
    );
    assert_eq!(summary["certificate"]["status"], "satisfied");
    assert_eq!(summary["operator_checks"]["cocoercivity"]["passed"], true);
    let hyp = json(&dir.join("hypotheses.json"));
    assert_eq!(hyp["entries"].as_array().unwrap().len(), 7);
}

#[test]
fn comparison_config_separates_the_two_systems() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &["run", config("baseline_comparison.toml").to_str().unwrap()],
    );
    assert!(out.status.success());
    let base = root.path().join("output/baseline_comparison");
    let ds = json(&base.join("ds_q0.5000/summary.json"));
    let tds = json(&base.join("tds/summary.json"));
    assert!(ds["final_state"]["norm_x"].as_f64().unwrap() < 0.05);
    assert!(tds["final_state"]["x"][1].as_f64().unwrap().abs() > 0.2);
    let tds_diag = std::fs::read_to_string(base.join("tds/diagnostics.csv")).unwrap();
    assert!(tds_diag.starts_with("t,yosida_sq,velocity_sq,dist_to_reference_sq\n"));
}

#[test]
fn final_distance_shrinks_with_time_for_each_exponent() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &["run", config("slow_rates.toml").to_str().unwrap()],
    );
    assert!(out.status.success());
    for label in ["ds_q0.2000", "ds_q0.3333", "ds_q0.5000"] {
        let dir = root.path().join("output/slow_rates").join(label);
        let text = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
        let dists: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(7).unwrap().parse().unwrap())
            .collect();
        assert!(dists.last().unwrap() < &(1e-3 * dists[0]), "{label}");
    }
}

#[test]
fn delta_outside_window_warns_but_runs() {
    let root = tempfile::tempdir().unwrap();
    let cfg = variant(root.path(), "delta = \"4/3\"", "delta = 3");
    let out = coflow(root.path(), &["run", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = root.path().join("output/reproduction");
    let summary = json(&dir.join("summary.json"));
    assert!(summary["warnings"]
        .as_array()
        .unwrap()
        .contains(&Value::from("c")));
    assert_eq!(summary["certificate"]["status"], "refused");
    let hyp = json(&dir.join("hypotheses.json"));
    let c = hyp["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["id"] == "c")
        .unwrap();
    assert_eq!(c["verdict"], "violated");
}

#[test]
fn constant_schedule_refuses_certificate() {
    let root = tempfile::tempdir().unwrap();
    let cfg = variant(
        root.path(),
        "kind = \"power\"\nq = \"1/2\"",
        "kind = \"constant\"\nvalue = 0.5",
    );
    let out = coflow(root.path(), &["run", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = json(&root.path().join("output/reproduction/summary.json"));
    assert_eq!(summary["certificate"]["status"], "refused");
}

#[test]
fn unknown_key_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = variant(
        root.path(),
        "samples = 400",
        "samples = 400\nsolver = \"rk4\"",
    );
    let out = coflow(root.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "ConfigError");
    assert_eq!(err["key"], "solver");
}

#[test]
fn invalid_eta_names_the_key() {
    let root = tempfile::tempdir().unwrap();
    let cfg = variant(root.path(), "eta = 3", "eta = 1.5");
    let out = coflow(root.path(), &["check", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["key"], "operator.eta");
}

#[test]
fn check_prints_hypotheses_without_writing() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &["check", config("fast_rates.toml").to_str().unwrap()],
    );
    assert!(out.status.success());
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0]["label"], "ds_q0.6667");
    assert!(!root.path().join("output").exists());
}

#[test]
fn q_sweep_aggregates_rates() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &[
            "sweep",
            config("reproduction.toml").to_str().unwrap(),
            "--param",
            "q",
            "--values",
            "1/5,1/3,1/2",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rates =
        std::fs::read_to_string(root.path().join("output/reproduction/sweep_q/rates.csv")).unwrap();
    let rows: Vec<&str> = rates
        .lines()
        .skip(1)
        .filter(|l| l.contains("position_gap_sq"))
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rates.starts_with("value,run,status,quantity,slope,"));
}

#[test]
fn sweep_records_failures_and_continues() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &[
            "sweep",
            config("reproduction.toml").to_str().unwrap(),
            "--param",
            "eta",
            "--values",
            "3,1",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let rates =
        std::fs::read_to_string(root.path().join("output/reproduction/sweep_eta/rates.csv"))
            .unwrap();
    assert!(rates.lines().any(|l| l.contains(",ConfigError,")));
    assert!(rates.lines().any(|l| l.contains(",ok,")));
}

#[test]
fn empty_sweep_is_insufficient_data() {
    let root = tempfile::tempdir().unwrap();
    let out = coflow(
        root.path(),
        &[
            "sweep",
            config("reproduction.toml").to_str().unwrap(),
            "--param",
            "q",
            "--values",
            "",
        ],
    );
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "InsufficientData");
}
