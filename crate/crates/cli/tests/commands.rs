use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cfx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(args)
        .current_dir(dir)
        .env("GRADCF_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cfx(dir, args);
    assert!(
        out.status.success(),
        "cfx {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = cfx(dir, args);
    assert!(!out.status.success(), "cfx {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn explain_writes_every_artifact_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["explain", "--out", "a"]);
    for f in ["set.csv", "attribution.json", "attribution.csv", "trace.jsonl", "metrics.json", "manifest.json"] {
        assert!(dir.join("a").join(f).is_file(), "{f}");
    }
    let manifest = json(&dir.join("a/manifest.json"));
    assert_eq!(manifest["command"], "explain");
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["outputs"].as_array().unwrap().contains(&Value::from("set.csv")));

    let metrics = json(&dir.join("a/metrics.json"));
    let set = std::fs::read_to_string(dir.join("a/set.csv")).unwrap();
    assert_eq!(set.lines().count(), 1 + 5);
    assert_eq!(metrics["target"], 1);
    assert!(metrics["metrics"]["confidence"].as_f64().unwrap() > 0.5);
    let trace = std::fs::read_to_string(dir.join("a/trace.jsonl")).unwrap();
    let first: Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for key in ["t", "restart", "total", "val", "prox", "spars", "spars_smooth", "plaus", "div", "cat", "perturbed"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    // re-run from the manifest into a fresh directory
    ok(dir, &["explain", "--config", "a/manifest.json", "--out", "b"]);
    for f in ["set.csv", "attribution.json", "attribution.csv", "trace.jsonl", "metrics.json"] {
        assert_eq!(
            std::fs::read(dir.join("a").join(f)).unwrap(),
            std::fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }

    // an external copy of the set scores exactly as in-process
    std::fs::copy(dir.join("a/set.csv"), dir.join("external.csv")).unwrap();
    ok(dir, &["evaluate", "--set", "external.csv", "--out", "c"]);
    let scored = json(&dir.join("c/metrics.json"));
    assert_eq!(scored["metrics"], metrics["metrics"]);
    assert_eq!(scored["query_id"], metrics["query_id"]);
}

#[test]
fn toggle_emits_two_rows_and_loss_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "experiment", "toggle", "--toggle", "perturbation", "--queries", "2", "--seeds", "0",
        "--max-iterations", "200", "--max-perturbations", "2", "--out", "t",
    ];
    ok(tmp.path(), &args);
    let csv = std::fs::read_to_string(tmp.path().join("t/toggle_perturbation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("with perturbation") && csv.contains("without perturbation"));
    for f in ["toggle_perturbation_on.jsonl", "toggle_perturbation_off.jsonl", "toggle_perturbation.svg"] {
        assert!(tmp.path().join("t").join(f).is_file(), "{f}");
    }
}

#[test]
fn grid_and_bench_experiments() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let err = fails(d, &["experiment", "grid", "--out", "g"]);
    assert!(err.contains("experiment.grid"), "{err}");
    ok(d, &[
        "experiment", "grid", "--grid", "lambda_div=0.1,0.9", "--queries", "1", "--seeds", "0",
        "--max-iterations", "100", "--max-perturbations", "0", "--out", "g",
    ]);
    let table = json(&d.join("g/grid.json"));
    assert_eq!(table["rows"].as_array().unwrap().len(), 2);

    let cfg = d.join("bench.json");
    std::fs::write(
        &cfg,
        r#"{"dataset": {"synthetic": {"kind": "blobs", "rows": 200, "classes": 2, "continuous": 3}}, "experiment": {"bench_sizes": [2, 4], "bench_repetitions": 50}}"#,
    )
    .unwrap();
    ok(d, &["experiment", "bench", "--config", "bench.json", "--out", "b"]);
    let rows = json(&d.join("b/bench.json"));
    assert_eq!(rows.as_array().unwrap().len(), 2);
}

#[test]
fn configuration_errors_exit_nonzero_with_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let err = fails(d, &["train", "--lambda-div", "-1"]);
    assert!(err.contains("hyperparameters.lambda_div"), "{err}");
    let err = fails(d, &["train", "--param", "tau_prox=3"]);
    assert!(err.contains("tau_prox"), "{err}");
    std::fs::write(
        d.join("missing.json"),
        r#"{"dataset": {"csv": {"path": "nope.csv", "schema": "nope.json"}}}"#,
    )
    .unwrap();
    let err = fails(d, &["train", "--config", "missing.json"]);
    assert!(err.contains("dataset.csv.path"), "{err}");
    let err = fails(d, &["explain", "--target", "5"]);
    assert!(err.contains("target"), "{err}");
}

#[test]
fn infeasible_constraints_surface_the_engine_message() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "explain", "--fix", "x0", "--fix", "x1", "--fix", "x2", "--fix", "x3", "--fix", "c0",
        "--fix", "c1", "--out", "o",
    ];
    let err = fails(tmp.path(), &args);
    assert!(err.contains("infeasible constraints"), "{err}");
}

#[test]
fn csv_data_trained_model_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &[
        "synth", "--spec", r#"{"kind": "linear_teacher", "rows": 300, "weights": [1.5, -1.0, 0.0]}"#,
        "--out", "data",
    ]);
    std::fs::write(
        d.join("run.json"),
        r#"{"dataset": {"csv": {"path": "data/data.csv", "schema": "data/schema.json"}},
            "hyperparameters": {"max_iterations": 300, "max_perturbations": 1, "n": 3},
            "output_dir": "runs"}"#,
    )
    .unwrap();
    let stdout = ok(d, &["train", "--config", "run.json"]);
    assert!(stdout.contains("accuracy"));
    assert!(d.join("runs/model.json").is_file());
    let acc = json(&d.join("runs/accuracy.json"));
    assert!(acc["testing"].as_f64().unwrap() > 0.9);

    ok(d, &[
        "explain", "--config", "run.json", "--model", "runs/model.json", "--out", "runs/e",
        "--query-json", r#"{"x0": 23.3, "x1": 23.2, "x2": 49.0}"#, "--direction", "x0=increase",
    ]);
    let m = json(&d.join("runs/e/metrics.json"));
    assert_eq!(m["query"]["x0"], 23.3);
    assert!(m["violations"].as_array().unwrap().is_empty());
    let manifest = json(&d.join("runs/e/manifest.json"));
    assert!(manifest["inputs"].to_string().contains("model.json"));

    let out = ok(d, &[
        "plot", "--trace", "runs/e/trace.jsonl", "--attribution", "runs/e/attribution.json",
        "--out", "plots",
    ]);
    assert_eq!(out.lines().count(), 2);
    let svg = std::fs::read_to_string(d.join("plots/loss.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    assert!(std::fs::read_to_string(d.join("plots/attribution.svg")).unwrap().contains(">x0<"));
}

#[test]
fn config_prints_the_effective_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["config", "--lambda-plaus", "0.25", "--seed", "4"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["hyperparameters"]["weights"]["plausibility"], 0.25);
    assert_eq!(v["seed"], 4);
}
