use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aoi_buffer::source::{mmse_error, yule_walker_autocovariance, ArSourceModel};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-buffer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A fast two-sensor configuration written into `dir`.
fn small_config(dir: &Path, sensors: usize) -> String {
    let sensor =
        r#"{"order": 4, "coeffs": [0.1, 0.0, 0.0, 0.8], "noise_var": 1.0, "success_prob": 0.8}"#;
    let list = vec![sensor; sensors].join(", ");
    let text = format!(
        r#"{{
  "sensors": [{list}],
  "channels": 1,
  "buffer": 2,
  "gamma": 0.9,
  "delta_max": 20,
  "horizon": 3000,
  "replications": 3,
  "seed": 1,
  "out_dir": "out"
}}"#
    );
    fs::write(dir.join("cfg.json"), text).unwrap();
    "cfg.json".into()
}

#[test]
fn malformed_config_is_a_usage_error_with_location() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        "{\n  \"channels\": 1,\n  \"buffer\": \n}",
    )
    .unwrap();
    let o = run(dir.path(), &["solve", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("bad.json") && msg.contains("line 4"), "{msg}");
    assert_eq!(msg.trim().lines().count(), 1);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"sensors": [], "chanels": 1}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["solve", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("chanels"));
}

#[test]
fn unknown_policy_lists_the_valid_names() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 2);
    let o = run(
        dir.path(),
        &["simulate", "--policy", "greedy", "--config", &cfg],
    );
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for name in ["mgf", "maf", "rr", "rand", "never"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["solve"]).status.code(), Some(2));
}

#[test]
fn seeded_simulations_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 2);
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let o = run(
            dir.path(),
            &[
                "simulate", "--policy", "mgf", "--seed", "7", "--config", &cfg, "--out", out,
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(dir.path().join(out).join("simulate_mgf.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let header = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(header.starts_with("policy,p,buffer,avg_error,stderr,discounted_error,sched_rate_sensor_1,sched_rate_sensor_2\n"));
}

#[test]
fn never_transmitting_reports_the_saturated_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 2);
    let o = run(
        dir.path(),
        &["simulate", "--policy", "never", "--config", &cfg],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/simulate_never.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let avg: f64 = row[3].parse().unwrap();
    let stderr_col: f64 = row[4].parse().unwrap();
    let rate: f64 = row[6].parse().unwrap();
    assert_eq!(rate, 0.0);
    assert_eq!(stderr_col, 0.0);
    // By the end of warm-up both samples have saturated at age 20.
    let model = ArSourceModel::fourth_order_example(0.8).unwrap();
    let table = yule_walker_autocovariance(&model, 20).unwrap();
    let saturated = mmse_error(&model, &table, &[20, 20]).unwrap();
    assert!((avg - saturated).abs() < 1e-9, "{avg} vs {saturated}");
}

#[test]
fn a_single_sensor_pays_no_price() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 1);
    let o = run(dir.path(), &["solve", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/solve_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["lambda_star"].as_f64(), Some(0.0));
    for f in ["states.legend.csv", "sensor_1_values.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn error_curve_writes_both_buffers() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("model.json"),
        r#"{"order": 4, "coeffs": [0.1, 0.0, 0.0, 0.8], "noise_var": 1.0, "success_prob": 0.8}"#,
    )
    .unwrap();
    let o = run(
        dir.path(),
        &[
            "error-curve",
            "--model",
            "model.json",
            "--buffer",
            "2",
            "--fixed",
            "4",
            "--delta-max",
            "10",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/error_curve_b2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("buffer,delta_1,error"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.iter().any(|r| r[0] == 1.0) && rows.iter().any(|r| r[0] == 2.0));
    // (1, 4) recovers the exact regressors of this model.
    let exact = rows.iter().find(|r| r[0] == 2.0 && r[1] == 1.0).unwrap();
    assert!((exact[2] - 1.0).abs() < 1e-9);
}

#[test]
fn print_config_fills_in_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 2);
    let o = run(
        dir.path(),
        &["--print-config", "--config", &cfg, "--gamma", "0.5"],
    );
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gamma"].as_f64(), Some(0.5));
    assert_eq!(v["dual"]["max_iter"].as_u64(), Some(500));
}
