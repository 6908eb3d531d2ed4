use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offpolicy"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_field(path: &Path, row: usize, column: &str) -> String {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap();
    r.records().nth(row).unwrap().unwrap()[idx].to_string()
}

fn simpson(dir: &Path) {
    ok(dir, &["simulate", "simpson", "--out", "sim"]);
    ok(
        dir,
        &[
            "policy", "--family", "context-free", "--theta", "1,0", "--greedy", "--data", "sim/simpson.jsonl", "--name",
            "surgery.ckpt", "--out", "sim",
        ],
    );
}

#[test]
fn evaluate_always_surgery() {
    let dir = tempfile::tempdir().unwrap();
    simpson(dir.path());
    ok(
        dir.path(),
        &["evaluate", "--estimator", "ipwe", "--policy", "sim/surgery.ckpt", "--data", "sim/simpson.jsonl", "--out", "ev"],
    );
    let point: f64 = csv_field(&dir.path().join("ev/estimates.csv"), 0, "point").parse().unwrap();
    assert!((point - (0.51 * 81.0 / 87.0 + 0.49 * 192.0 / 263.0)).abs() < 1e-12, "{point}");
    assert!(dir.path().join("ev/manifest").exists());
}

#[test]
fn diagnose_reports_underfit_context_free_imitation() {
    let dir = tempfile::tempdir().unwrap();
    simpson(dir.path());
    ok(dir.path(), &["diagnose", "--family", "context-free", "--data", "sim/simpson.jsonl", "--out", "dg"]);
    let csv = dir.path().join("dg/diagnosis.csv");
    let ppl: f64 = csv_field(&csv, 0, "perplexity").parse().unwrap();
    assert!((ppl - 1.155).abs() <= 0.005, "{ppl}");
    assert_eq!(csv_field(&csv, 0, "verdict"), "UNDERFIT");
    ok(
        dir.path(),
        &["diagnose", "--family", "tabular", "--reveal-hidden", "--data", "sim/simpson.jsonl", "--out", "dg2"],
    );
    let loss: f64 = csv_field(&dir.path().join("dg2/diagnosis.csv"), 0, "iml_loss").parse().unwrap();
    assert!(loss < 1e-3, "{loss}");
}

#[test]
fn greedy_reward_model_picks_puncture() {
    let dir = tempfile::tempdir().unwrap();
    simpson(dir.path());
    ok(dir.path(), &["fit-reward", "--family", "context-free", "--data", "sim/simpson.jsonl", "--out", "fr"]);
    let csv = dir.path().join("fr/predictions.csv");
    assert_eq!(csv_field(&csv, 1, "action"), "puncture");
    assert_eq!(csv_field(&csv, 1, "greedy"), "1");
    let v: f64 = csv_field(&csv, 1, "prediction").parse().unwrap();
    assert!((v - 289.0 / 350.0).abs() < 1e-9);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    fs::write(dir.path().join("bad.json"), r#"{"command": ["evaluate"], "colour": 1}"#).unwrap();
    assert_eq!(run(dir.path(), &["--config", "bad.json"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["evaluate", "--policy", "logging", "--data", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    simpson(dir.path());
    let out = run(
        dir.path(),
        &["learn", "--objective", "poem", "--family", "linear", "--data", "sim/simpson.jsonl"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn manifest_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "simpson", "--mode", "sampled", "--scale", "3", "--seed", "11", "--out", "a"]);
    ok(dir.path(), &["--config", "a/manifest", "--out", "b"]);
    let a = fs::read(dir.path().join("a/simpson.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/simpson.jsonl")).unwrap());
    // flags override the file
    ok(dir.path(), &["--config", "a/manifest", "--seed", "12", "--out", "c"]);
    assert_ne!(a, fs::read(dir.path().join("c/simpson.jsonl")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("c/manifest")).unwrap()).unwrap();
    assert_eq!(m["seed"], 12);
    assert_eq!(m["command"], serde_json::json!(["simulate", "simpson"]));
    assert_eq!(m["options"]["scale"], "3");
}

#[test]
fn learning_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "confounded", "--n", "200", "--observed", "3", "--actions", "4", "--seed", "5", "--out", "c"]);
    for out in ["l1", "l2"] {
        ok(
            d,
            &[
                "learn", "--data", "c/confounded.jsonl", "--objective", "pil-iml:0.001", "--family", "lowrank:2",
                "--batch-size", "32", "--epochs", "20", "--seed", "3", "--out", out,
            ],
        );
    }
    for f in ["policy.ckpt", "trace.csv"] {
        assert_eq!(fs::read(d.join("l1").join(f)).unwrap(), fs::read(d.join("l2").join(f)).unwrap());
    }
    ok(d, &["resample", "--data", "c/confounded.jsonl", "--out", "r"]);
    ok(
        d,
        &["compare", "--data", "c/confounded.jsonl", "--policy", "l1/policy.ckpt", "--baseline", "r/iml.ckpt", "--out", "cmp"],
    );
    let term2: f64 = csv_field(&d.join("cmp/paired_delta.csv"), 0, "term2").parse().unwrap();
    assert!(term2.is_finite());
}

#[test]
fn iml_full_falls_back_on_partial_logs() {
    let dir = tempfile::tempdir().unwrap();
    simpson(dir.path());
    let out = run(
        dir.path(),
        &[
            "learn", "--objective", "iml-full", "--family", "context-free", "--scenario", "partial", "--data",
            "sim/simpson.jsonl", "--out", "l",
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("falling back to iml-part"));
}

#[test]
fn multiclass_conversion_and_bootstrap_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "multiclass", "--n", "400", "--out", "m"]);
    ok(d, &["convert", "--input", "m/multiclass.txt", "--out", "cv"]);
    let acc: f64 = csv_field(&d.join("cv/summary.csv"), 5, "value").parse().unwrap();
    assert!(acc > 0.25, "{acc}");
    ok(d, &["simulate", "sample", "--dist", "normal", "--n", "2000", "--out", "s"]);
    ok(d, &["bootstrap", "--values", "s/values.txt", "--replicates", "500", "--out", "b"]);
    let beta: f64 = csv_field(&d.join("b/bootstrap_fit.csv"), 0, "beta").parse().unwrap();
    assert!((0.3..0.7).contains(&beta), "{beta}");
    ok(d, &["tailplot", "--values", "s/values.txt", "--out", "t"]);
    assert!(d.join("t/tailplot.csv").exists());
}
