use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn adamus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adamus"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf-8 output")
}

fn lambda(dims: &str) -> f64 {
    let out = stdout(&adamus(&["unbalance", "--dims", dims, "--json"]));
    let v: Value = serde_json::from_str(&out).unwrap();
    v["lambda_total"].as_f64().unwrap()
}

const TINY: &str = r#"{
  "toy": {"n_samples": 90, "view_dims": [40, 10]},
  "train": {"hidden_dims": [16], "aligned_dim": 9, "epochs_pre": 2, "epochs_fine": 2, "batch_size": 32},
  "graph": {"k": 5, "consensus": {"lr": 0.001, "steps": 5}},
  "eval": {"runs": 2, "restarts": 2}
}"#;

fn tiny_run(dir: &Path, name: &str, extra: &[&str]) -> (String, std::path::PathBuf) {
    let config = dir.join("tiny.json");
    std::fs::write(&config, TINY).unwrap();
    let out_dir = dir.join(name);
    let mut args = vec![
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let printed = stdout(&adamus(&args));
    (printed, out_dir)
}

#[test]
fn unbalance_reproduces_reported_degrees() {
    assert!((lambda("30,1024") - 3.22).abs() <= 0.01);
    assert!((lambda("6,47,240") - 2.88).abs() <= 0.01);
    assert_eq!(lambda("8,8"), 0.0);
    let text = stdout(&adamus(&["unbalance", "--dims", "30,1024"]));
    assert!(text.contains("lambda    3.2199"), "{text}");
}

#[test]
fn bad_input_exits_nonzero() {
    assert!(!adamus(&["unbalance", "--dims", "30,abc"]).status.success());
    assert!(!adamus(&["unbalance", "--dims", "30"]).status.success());
    let missing = adamus(&["eval", "--run-dir", "/nonexistent/run"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    assert!(!adamus(&["run", "--train.no_such_field", "1"]).status.success());
}

#[test]
fn generate_toy_writes_views_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    stdout(&adamus(&[
        "generate-toy",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--n-samples",
        "60",
    ]));
    let view0 = std::fs::read_to_string(out.join("view_0.csv")).unwrap();
    let view1 = std::fs::read_to_string(out.join("view_1.csv")).unwrap();
    assert_eq!(view0.lines().count(), 60);
    assert_eq!(view0.lines().next().unwrap().split(',').count(), 3000);
    assert_eq!(view1.lines().next().unwrap().split(',').count(), 10);
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["labels"].as_array().unwrap().len(), 60);
    let w2 = truth["w2"].as_array().unwrap();
    assert!(w2
        .iter()
        .all(|row| row.as_array().unwrap()[..6].iter().all(|x| x.as_f64() == Some(0.0))));
}

#[test]
fn run_is_reproducible_and_eval_matches() {
    let dir = tempfile::tempdir().unwrap();
    let (first, a) = tiny_run(dir.path(), "a", &[]);
    let (second, b) = tiny_run(dir.path(), "b", &[]);
    assert_eq!(first, second);
    let ma = std::fs::read(a.join("metrics.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.json")).unwrap());
    for file in [
        "config.resolved.json",
        "checkpoint.json",
        "prune_report.json",
        "embeddings.csv",
    ] {
        assert!(a.join(file).is_file(), "{file} missing");
    }
    let again = stdout(&adamus(&["eval", "--run-dir", a.to_str().unwrap()]));
    assert_eq!(
        again.trim_end().as_bytes(),
        String::from_utf8(ma).unwrap().trim_end().as_bytes()
    );

    let report = stdout(&adamus(&["prune-report", a.to_str().unwrap()]));
    assert!(report.contains("tau variant"), "{report}");
    let json: Value = serde_json::from_str(&stdout(&adamus(&["prune-report", a.to_str().unwrap(), "--json"]))).unwrap();
    assert!(json["params_after"].as_u64().unwrap() < json["params_before"].as_u64().unwrap());
}

#[test]
fn disabling_pna_keeps_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (_, off) = tiny_run(dir.path(), "off", &["--pna.enabled", "false"]);
    let json: Value = serde_json::from_str(&std::fs::read_to_string(off.join("prune_report.json")).unwrap()).unwrap();
    assert_eq!(json["params_after"], json["params_before"]);
}
