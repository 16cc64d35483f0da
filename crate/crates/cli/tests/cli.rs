use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sense")).args(args).output().unwrap()
}

fn tiny() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models/tiny.json")
        .to_string_lossy()
        .into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_exits_2() {
    for sub in ["prune", "compress", "decompress", "simulate", "sweep", "trace"] {
        assert_eq!(sense(&[sub, "--frobnicate"]).status.code(), Some(2), "{sub}");
    }
    assert_eq!(sense(&["simulate", "--model", &tiny(), "--out", "x", "--mode", "fast"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = sense(&["simulate", "--model", "/nonexistent.json", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}

#[test]
fn simulate_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sense(&["simulate", "--model", &tiny(), "--conv-keep", "0.5", "--verify", "--out", path(dir.path())]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["layers"].as_array().unwrap().len(), 3);
    assert!(report["metadata"]["generated_at"].is_u64());
    let csv = std::fs::read_to_string(dir.path().join("layers.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("index,name,kind,mode,strategy,cycles,"));
    let schedule: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(schedule.as_array().unwrap().len(), 3);
}

#[test]
fn same_seed_same_bytes() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_sense"))
            .args(["simulate", "--model", &tiny(), "--seed", "7", "--conv-keep", "0.4", "--out", path(dir.path())])
            .env("SENSE_SIM_THREADS", threads)
            .output()
            .unwrap();
        ok(&out);
        std::fs::read(dir.path().join("layers.csv")).unwrap()
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("4"));
}

#[test]
fn bad_thread_cap_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_sense"))
        .args(["trace"])
        .env("SENSE_SIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forced_sparse_on_dense_data_costs_power() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("dense.json");
    std::fs::write(
        &model,
        r#"{"name": "dense", "layers": [{"kind": "conv", "C_i": 4, "C_o": 4, "H_i": 8, "W_i": 8, "H_k": 3, "W_k": 3, "ifm_sparsity": 0.0}]}"#,
    )
    .unwrap();
    ok(&sense(&["simulate", "--model", path(&model), "--mode", "sparse", "--out", path(dir.path())]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let layer = &report["layers"][0];
    assert_eq!(layer["mode"], "sparse");
    assert_eq!(layer["weight_sparsity"], 0.0);
    assert_eq!(layer["speedup"], 1.0);
    assert!((layer["energy_saving"].as_f64().unwrap() - 1.0 / 1.3).abs() < 1e-12);
}

#[test]
fn prune_compress_decompress_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pruned = dir.path().join("pruned");
    ok(&sense(&["prune", "--model", &tiny(), "--out", path(&pruned)]));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(pruned.join("prune_report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["n_nzew_max"], 4);
    let descriptor = std::fs::read_dir(&pruned)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "json") && !p.ends_with("prune_report.json"))
        .unwrap();

    let packed = dir.path().join("packed");
    ok(&sense(&["compress", "--model", path(&descriptor), "--out", path(&packed)]));
    let raw = dir.path().join("w0.bin");
    ok(&sense(&["decompress", "--input", path(&packed.join("layer0_weights.sbmc")), "--out", path(&raw)]));

    let desc: Value = serde_json::from_str(&std::fs::read_to_string(&descriptor).unwrap()).unwrap();
    let weight_file: PathBuf = pruned.join(desc["layers"][0]["weight_file"].as_str().unwrap());
    assert_eq!(std::fs::read(raw).unwrap(), std::fs::read(weight_file).unwrap());
}

#[test]
fn sweep_to_stdout_and_bad_grids() {
    let out = sense(&["sweep", "--axis", "weight_sparsity", "--grid", "0,0.5"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().contains(",2.0,"));
    assert_eq!(sense(&["sweep", "--axis", "pe_size", "--grid", "2.5"]).status.code(), Some(1));
    assert_eq!(sense(&["sweep", "--axis", "pe_size", "--grid", ""]).status.code(), Some(2));
    assert_eq!(sense(&["sweep", "--axis", "depth"]).status.code(), Some(2));
}

#[test]
fn trace_of_a_model_layer() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sense(&[
        "trace", "--model", &tiny(), "--layer", "0", "--conv-keep", "0.5", "--pe", "4", "--tile", "4", "--out",
        path(dir.path()),
    ]));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["matches_oracle"], true);
    let events = summary["events"].as_u64().unwrap();
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, events + 1);
    // layer 1 takes its input from layer 0
    assert_eq!(sense(&["trace", "--model", &tiny(), "--layer", "1"]).status.code(), Some(1));
}

#[test]
fn trace_rejects_bad_grids() {
    assert_eq!(sense(&["trace", "--ifm", "1,2;3", "--kernel", "1"]).status.code(), Some(1));
    assert_eq!(sense(&["trace", "--ifm", "1,2", "--kernel", "1,1,1"]).status.code(), Some(1));
}
