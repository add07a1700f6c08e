use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ikp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ikp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("ikp runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ikp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

fn assert_validation_error(out: &Output, needle: &str) {
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
    assert!(stderr.contains(needle), "{stderr}");
}

#[test]
fn simulate_mass_spring_defaults() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["simulate", "--out", "sim"]);
    let text = read(dir, "sim/measurements.csv");
    assert!(text.starts_with("dt=1.0000000000000000e-2\n"));
    assert_eq!(text.lines().count(), 6001);
    assert!(dir.join("sim/model.json").exists());
    assert!(dir.join("sim/config.json").exists());
}

#[test]
fn zero_steps_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "run.json", r#"{"simulate": {"mass_spring": {"steps_t": 0}}}"#);
    let out = ikp(dir, &["simulate", "--config", "run.json", "--out", "sim"]);
    assert_validation_error(&out, "steps_t");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "run.json", r#"{"optimise": {}}"#);
    let out = ikp(dir, &["simulate", "--config", "run.json"]);
    assert_validation_error(&out, "optimise");
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["simulate", "--seed", "9", "--out", "sim"]);
    let first: Vec<Vec<u8>> = ["truth.csv", "measurements.csv", "model.json", "config.json"]
        .iter()
        .map(|f| fs::read(dir.join("sim").join(f)).unwrap())
        .collect();
    ok(dir, &["simulate", "--seed", "9", "--out", "sim"]);
    for (name, before) in ["truth.csv", "measurements.csv", "model.json", "config.json"]
        .iter()
        .zip(&first)
    {
        assert_eq!(&fs::read(dir.join("sim").join(name)).unwrap(), before, "{name}");
    }
    ok(dir, &["simulate", "--seed", "10", "--out", "other"]);
    assert_ne!(read(dir, "other/measurements.csv"), read(dir, "sim/measurements.csv"));
}

#[test]
fn identify_then_optimize_then_predict() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "run.json",
        r#"{
            "simulate": {"mass_spring": {"steps_t": 800}},
            "identify": {"em": {"state_dim_n": 2, "max_iters": 50}},
            "optimize": {"horizon_t": 200, "budget_n": 10,
                         "ga": {"population_size": 30, "generations": 20}}
        }"#,
    );
    ok(dir, &["simulate", "--config", "run.json", "--out", "sim"]);
    ok(dir, &["identify", "--config", "run.json", "--trajectory", "sim/measurements.csv", "--out", "id"]);
    let fit: serde_json::Value = serde_json::from_str(&read(dir, "id/fit.json")).unwrap();
    assert_eq!(fit["state_dim_n"], 2);
    ok(dir, &["optimize", "--config", "run.json", "--model", "id/model.json", "--out", "opt"]);
    let schedule: serde_json::Value = serde_json::from_str(&read(dir, "opt/schedule.json")).unwrap();
    assert_eq!(schedule["T"], 200);
    assert_eq!(schedule["times"].as_array().unwrap().len(), 10);
    ok(
        dir,
        &[
            "predict", "--model", "id/model.json", "--schedule", "opt/schedule.json",
            "--trajectory", "sim/measurements.csv", "--out", "pred",
        ],
    );
    let belief = read(dir, "pred/belief.csv");
    assert!(belief.starts_with("t,pred_pos_1,post_pos_1,trace_prior,measured\n"));
    assert_eq!(belief.lines().count(), 202);
    let measured: usize = rows(&belief).iter().map(|r| r[4] as usize).sum();
    assert_eq!(measured, 10);
}

#[test]
fn identify_rejects_short_input() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("dt=1\n");
    for t in 0..15 {
        csv.push_str(&format!("{}\n", (t as f64 * 0.3).sin()));
    }
    write(dir, "short.csv", &csv);
    let out = ikp(dir, &["identify", "--trajectory", "short.csv", "--out", "id"]);
    assert_validation_error(&out, "10·n");
}

const SCALAR_MODEL: &str = r#"{
    "A": [[0.9]], "b": [0.1], "G": [[1.0]], "Q": [[0.5]],
    "C": [[1.0]], "d": [0.0], "R": [[0.25]],
    "x0_mean": [0.0], "x0_cov": [[1.0]]
}"#;

#[test]
fn optimize_small_instance_matches_exhaustive() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "model.json", SCALAR_MODEL);
    write(dir, "ga.json", r#"{"optimize": {"horizon_t": 12, "budget_n": 3}}"#);
    write(dir, "ex.json", r#"{"optimize": {"horizon_t": 12, "budget_n": 3, "method": "exhaustive"}}"#);
    ok(dir, &["optimize", "--config", "ga.json", "--model", "model.json", "--out", "ga"]);
    ok(dir, &["optimize", "--config", "ex.json", "--model", "model.json", "--out", "ex"]);
    let ga: serde_json::Value = serde_json::from_str(&read(dir, "ga/schedule.json")).unwrap();
    let ex: serde_json::Value = serde_json::from_str(&read(dir, "ex/schedule.json")).unwrap();
    let (a, b) = (ga["objective"].as_f64().unwrap(), ex["objective"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-9 * b);
}

#[test]
fn zero_generations_echo_the_regular_schedule() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "model.json", SCALAR_MODEL);
    write(
        dir,
        "run.json",
        r#"{"optimize": {"horizon_t": 20, "budget_n": 4, "ga": {"generations": 0}}}"#,
    );
    ok(dir, &["optimize", "--config", "run.json", "--model", "model.json", "--out", "opt"]);
    let doc: serde_json::Value = serde_json::from_str(&read(dir, "opt/schedule.json")).unwrap();
    assert_eq!(doc["times"], serde_json::json!([0, 5, 10, 15]));
}

/// Scalar textbook filter over the CSV values, every step measured.
fn scalar_filter(z: &[f64], horizon: usize) -> Vec<f64> {
    let (a, b, q, r) = (0.9, 0.1, 0.5, 0.25);
    let (mut x, mut p) = (0.0, 1.0);
    let mut pred = Vec::new();
    for t in 0..=horizon {
        pred.push(x);
        if t < horizon {
            let k = p / (p + r);
            x += k * (z[t] - x);
            p *= 1.0 - k;
        }
        x = a * x + b;
        p = a * a * p + q;
    }
    pred
}

#[test]
fn predict_full_schedule_matches_textbook_filter() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "model.json", SCALAR_MODEL);
    let z: Vec<f64> = (0..8).map(|t| (t as f64 * 0.7).cos() * 2.0).collect();
    let csv: String = std::iter::once("dt=1".to_string())
        .chain(z.iter().map(|v| format!("{v:e}")))
        .collect::<Vec<_>>()
        .join("\n");
    write(dir, "z.csv", &csv);
    write(dir, "full.json", r#"{"T": 8, "times": [0, 1, 2, 3, 4, 5, 6, 7]}"#);
    ok(
        dir,
        &["predict", "--model", "model.json", "--schedule", "full.json", "--trajectory", "z.csv", "--out", "p"],
    );
    let got: Vec<f64> = rows(&read(dir, "p/belief.csv")).iter().map(|r| r[1]).collect();
    let expected = scalar_filter(&z, 8);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0), "{got:?} vs {expected:?}");
    }
}

#[test]
fn predict_empty_schedule_rolls_the_model_forward() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "model.json", SCALAR_MODEL);
    write(dir, "z.csv", "dt=1\n5\n5\n5\n5\n");
    write(dir, "empty.json", r#"{"T": 4, "times": []}"#);
    ok(
        dir,
        &["predict", "--model", "model.json", "--schedule", "empty.json", "--trajectory", "z.csv", "--out", "p"],
    );
    let got: Vec<f64> = rows(&read(dir, "p/belief.csv")).iter().map(|r| r[1]).collect();
    let mut x = 0.0;
    for g in got {
        assert!((g - x).abs() < 1e-15);
        x = 0.9 * x + 0.1;
    }
}

#[test]
fn predict_rejects_schedule_beyond_measurements() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "model.json", SCALAR_MODEL);
    write(dir, "z.csv", "dt=1\n1\n2\n3\n");
    write(dir, "s.json", r#"{"T": 10, "times": [1, 6]}"#);
    let out = ikp(
        dir,
        &["predict", "--model", "model.json", "--schedule", "s.json", "--trajectory", "z.csv", "--out", "p"],
    );
    assert_validation_error(&out, "t=6");
}

#[test]
fn predict_rejects_dimension_mismatch() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "model.json", SCALAR_MODEL);
    write(dir, "z.csv", "dt=1\n1,2\n2,3\n3,4\n");
    write(dir, "s.json", r#"{"T": 3, "times": [1]}"#);
    let out = ikp(
        dir,
        &["predict", "--model", "model.json", "--schedule", "s.json", "--trajectory", "z.csv", "--out", "p"],
    );
    assert_validation_error(&out, "columns");
}

#[test]
fn missing_input_file_is_reported() {
    let tmp = TempDir::new().unwrap();
    let out = ikp(tmp.path(), &["optimize", "--model", "nope.json"]);
    assert_validation_error(&out, "does not exist");
}

const SMALL_BENCH: &str = r#"{
    "bench": {
        "protocol": {
            "sigma2_grid": [4.0],
            "budget_fraction_grid": [0.2, 0.4],
            "horizon_t": 60, "train_steps": 120, "warmup_t0": 10,
            "replications": 2, "state_dim": 2,
            "em": {"max_iters": 30},
            "ga": {"population_size": 20, "generations": 10}
        },
        "surrogate": {"steps": 200}
    }
}"#;

#[test]
fn bench_single_noise_level_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "run.json", SMALL_BENCH);
    ok(dir, &["bench", "--config", "run.json", "--out", "b1"]);
    ok(dir, &["bench", "--config", "run.json", "--out", "b2"]);
    assert_eq!(read(dir, "b1/bench.csv"), read(dir, "b2/bench.csv"));
    assert_eq!(read(dir, "b1/table.txt"), read(dir, "b2/table.txt"));

    let csv = read(dir, "b1/bench.csv");
    assert!(csv.starts_with("method,sigma2,budget_fraction,replication,rms\n"));
    // 4 methods × 2 budgets × 2 replications
    assert_eq!(csv.lines().count(), 1 + 16);
    let table = read(dir, "b1/table.txt");
    assert_eq!(table.lines().next().unwrap().matches('|').count(), 2);
    assert!(table.contains("N/T=0.2") && table.contains("N/T=0.4"));
    assert!(table.contains("mean relative improvement"));
}

#[test]
fn bench_rejects_short_trajectories() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "run.json", &SMALL_BENCH.replace(r#""steps": 200"#, r#""steps": 150"#));
    let out = ikp(dir, &["bench", "--config", "run.json", "--out", "b"]);
    assert_validation_error(&out, "train_steps + T + 1");
}
