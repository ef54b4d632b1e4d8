use std::path::Path;

use assert_cmd::Command;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::cargo_bin("bayes-pde").unwrap();
    c.env("RUST_LOG", "warn");
    c
}

fn default_config(problem: &str) -> Value {
    let out = bin()
        .args(["--problem", problem, "--print-config", "generate"])
        .output()
        .unwrap();
    assert!(out.status.success());
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Small network, short chains and a coarse grid.
fn tiny_config(dir: &Path, problem: &str) -> std::path::PathBuf {
    let mut cfg = default_config(problem);
    cfg["architecture"]["n_layers"] = json!(2);
    cfg["architecture"]["n_units"] = json!(8);
    cfg["hmc"]["n_samples"] = json!(30);
    cfg["hmc"]["burn_in"] = json!(10);
    cfg["hmc"]["leapfrog_steps"] = json!(4);
    cfg["adam"]["iterations"] = json!(40);
    cfg["d"] = json!(200);
    cfg["thinning"] = json!(2);
    cfg["n_test"] = json!(50);
    cfg["grid"] = json!({"nx": 161, "nt": 51, "scheme": "finite_difference", "safety": 0.5, "max_substeps": 2000000});
    cfg["noise_cases"] = json!([{"kind": "none"}, {"kind": "gaussian", "sigma": 0.05}]);
    cfg["out_dir"] = json!(dir.join("out"));
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["generate", "train", "discover", "evaluate", "pipeline", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn generate_writes_800_rows_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "burgers");
    bin().args(["--config"]).arg(&cfg).args(["--seed", "3", "generate"]).assert().success();
    let csv = dir.path().join("out/burgers/noiseless/dataset.csv");
    let first = std::fs::read(&csv).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 801);
    bin().args(["--config"]).arg(&cfg).args(["--seed", "3", "generate"]).assert().success();
    assert_eq!(first, std::fs::read(&csv).unwrap());

    let side = read_json(&dir.path().join("out/burgers/noiseless/dataset.json"));
    assert_eq!(side["n_records"], json!(800));
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn noisy_heat_sidecar_records_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "heat");
    bin().arg("--config").arg(&cfg).args(["--noise", "0.01", "generate"]).assert().success();
    let side = read_json(&dir.path().join("out/heat/noise-0.01/dataset.json"));
    assert_eq!(side["sigma_noise"], json!(0.01));
}

#[test]
fn train_then_discover_with_both_surrogates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "burgers");
    let case = dir.path().join("out/burgers/noiseless");
    bin().arg("--config").arg(&cfg).arg("generate").assert().success();
    bin().arg("--config").arg(&cfg).args(["train", "--mode", "bnn"]).assert().success();
    bin().arg("--config").arg(&cfg).args(["train", "--mode", "dnn"]).assert().success();

    let report = read_json(&case.join("train_bnn.json"));
    let rate = report["acceptance_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert_eq!(report["n_samples"], json!(20));

    bin().arg("--config").arg(&cfg).args(["--method", "stblr", "discover"]).assert().success();
    bin().arg("--config").arg(&cfg).args(["--method", "stols", "discover"]).assert().success();
    let found = read_json(&case.join("discovered_stblr.json"));
    assert_eq!(found["coefficients"].as_array().unwrap().len(), 11);
    assert!(found["e_c"].as_f64().is_some());

    let out = bin().arg("--config").arg(&cfg).arg("evaluate").output().unwrap();
    assert!(out.status.success());
    let ev = read_json(&case.join("evaluation.json"));
    assert!(ev["rmse_bnn"].as_f64().is_some() && ev["rmse_dnn"].as_f64().is_some());
}

#[test]
fn dnn_with_zero_iterations_keeps_its_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "burgers");
    let mut v = read_json(&cfg);
    v["adam"]["iterations"] = json!(0);
    std::fs::write(&cfg, serde_json::to_vec(&v).unwrap()).unwrap();
    bin().arg("--config").arg(&cfg).arg("generate").assert().success();
    bin().arg("--config").arg(&cfg).args(["train", "--mode", "dnn"]).assert().success();
    let weights = bayes_pde_weights(&dir.path().join("out/burgers/noiseless/dnn.bin"));
    let report = read_json(&dir.path().join("out/burgers/noiseless/train_dnn.json"));
    let arch = serde_json::from_value(v["architecture"].clone()).unwrap();
    let init = bayes_pde::adam::init_uniform(arch, report["seed"].as_u64().unwrap()).unwrap();
    assert_eq!(weights, vec![init]);
}

fn bayes_pde_weights(path: &Path) -> Vec<bayes_pde::net::WeightVector> {
    bayes_pde::io::read_weights(path).unwrap()
}

#[test]
fn exact_library_recovers_burgers_with_doubling_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "burgers");
    let mut v = read_json(&cfg);
    v["grid"] = Value::Null;
    v["d"] = json!(2000);
    std::fs::write(&cfg, serde_json::to_vec(&v).unwrap()).unwrap();
    bin().arg("--config").arg(&cfg).arg("generate").assert().success();
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["--method", "stols", "discover", "--surrogate", "exact"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let order: Vec<&str> = table.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(&order[..3], &["u", "u_x", "u_xx"]);

    let found = read_json(&dir.path().join("out/burgers/noiseless/discovered_stols.json"));
    assert_eq!(found["active_set"], json!(["u_xx", "u*u_x"]));
    let deltas: Vec<f64> = found["threshold_history"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["delta"].as_f64().unwrap())
        .collect();
    for (k, d) in deltas.iter().enumerate() {
        assert_eq!(*d, 0.005 * 2f64.powi(k as i32));
    }
}

#[test]
fn pipeline_and_report_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "burgers");
    bin().arg("--config").arg(&cfg).args(["--seed", "11", "pipeline"]).assert().success();
    let root = dir.path().join("out/burgers");
    let first = std::fs::read(root.join("report.json")).unwrap();
    let report: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["cases"].as_array().unwrap().len(), 2);
    assert_eq!(report["seeds"]["master"], json!(11));
    let md = std::fs::read_to_string(root.join("report.md")).unwrap();
    assert!(md.contains("BNN / STBLR") && md.contains("DNN / STOLS"));

    bin().arg("--config").arg(&cfg).args(["--seed", "11", "report"]).assert().success();
    assert_eq!(first, std::fs::read(root.join("report.json")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing config file.
    bin().args(["--config", "/nonexistent/cfg.json", "generate"]).assert().code(4);
    // Malformed config.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    bin().arg("--config").arg(&bad).arg("generate").assert().code(2);
    // Unknown preset.
    bin().args(["--problem", "wave", "generate"]).assert().code(2);
    // Unknown flag value.
    bin().args(["--profile", "huge", "generate"]).assert().code(2);
    // Training before generating.
    let cfg = tiny_config(dir.path(), "burgers");
    bin().arg("--config").arg(&cfg).args(["train", "--mode", "dnn"]).assert().code(4);
    // Solver cap hit while producing the ground truth.
    let mut v = read_json(&cfg);
    v["grid"]["max_substeps"] = json!(1);
    std::fs::write(&cfg, serde_json::to_vec(&v).unwrap()).unwrap();
    bin().arg("--config").arg(&cfg).arg("generate").assert().code(3);
}
