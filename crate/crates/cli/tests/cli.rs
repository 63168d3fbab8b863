use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const ROOM: &str = r#"{
  "shoebox": {"dims": [5, 7, 3], "walls": ["a", "a", "a", "a", "a", "a"]},
  "materials": {"a": {"reflectivity": [0.8, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8]}},
  "source": [1.2, 1.5, 1.4], "listener": [3.6, 5.1, 1.7]
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roomrelight"))
        .arg("--output-dir")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["analyze-ir", "no_such_ir.wav"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no_such_ir.wav"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sweep", "--room", "r.json", "--frobnicate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--frobnicate"));
}

#[test]
fn augment_then_analyze_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--seed", "3", "augment", "--synthetic", "2", "--count", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let wav = dir.path().join("aug_00000.wav");
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("aug_00000.json")).unwrap()).unwrap();
    assert!(sidecar["source"].is_string());

    let out = run(dir.path(), &["analyze-ir", wav.to_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["t60"]["values"].as_array().unwrap().len(), 7);
    assert_eq!(v["eq"]["values"].as_array().unwrap().len(), 6);
    assert!(v["drr_db"].is_number());

    let out = run(dir.path(), &["analyze-ir", wav.to_str().unwrap(), "--json", "--bands", "eq"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v.get("t60").is_none() && v.get("eq").is_some());
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let room = dir.path().join("room.json");
    fs::write(&room, ROOM).unwrap();
    let out = run(dir.path(), &["sweep", "--room", room.to_str().unwrap(), "--steps", "2", "--rays", "4000"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "target_t60,band_hz,measured_t60,relative_error,status");
    assert_eq!(lines.len(), 1 + 2 * 7 + 1);
    assert!(lines.last().unwrap().starts_with("max,"));
}

#[test]
fn bench_filter_runs_one_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["bench", "--filter", "gradient"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 1);
    assert!(stderr(&out).contains("[PASS] 1 gradient"));

    let out = run(dir.path(), &["bench", "--filter", "nothing-matches"]);
    assert!(!out.status.success());
}

#[test]
fn predictions_apply_matches_targets() {
    let dir = tempfile::tempdir().unwrap();
    let room = dir.path().join("room.json");
    fs::write(&room, ROOM).unwrap();
    let preds = dir.path().join("preds.json");
    fs::write(
        &preds,
        r#"[{"example_id": "a", "head": "t60", "values": [0.5, 0.5, 0.45, 0.45, 0.4, 0.4, 0.35], "model_hash": "h"},
            {"example_id": "a", "head": "t60", "values": [0.6, 0.5, 0.45, 0.45, 0.4, 0.4, 0.35], "model_hash": "h"},
            {"example_id": "a", "head": "t60", "values": [0.7, 0.5, 0.45, 0.45, 0.4, 0.4, 0.35], "model_hash": "h"},
            {"example_id": "b", "head": "t60", "values": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], "model_hash": "h"}]"#,
    )
    .unwrap();
    let out = run(
        dir.path(),
        &["predictions-apply", "--room", room.to_str().unwrap(), "--predictions", preds.to_str().unwrap(), "--example-id", "a", "--rays", "4000"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("predicted_report.json")).unwrap()).unwrap();
    assert!((report["reference_t60"]["values"][0].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!(report["t60_error"].as_f64().unwrap() < 0.05);

    fs::write(&preds, r#"{"example_id": "a", "head": "t60", "values": [0.01, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], "model_hash": "h"}"#).unwrap();
    let out = run(dir.path(), &["predictions-apply", "--room", room.to_str().unwrap(), "--predictions", preds.to_str().unwrap()]);
    assert!(!out.status.success());
}
