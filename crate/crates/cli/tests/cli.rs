//! End-to-end tests of the `cfad` binary: every subcommand runs as a
//! child process against a temporary run directory, sized small enough
//! that the whole file finishes in seconds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cfad() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfad"))
}

/// A benchmark and training recipe small enough for fast runs. Eight
/// nodes with dense edges keep the counterfactual-label quotas
/// reachable at tiny sample counts.
const SMALL_CONFIG: &str = r#"{
    "synth.nodes": 8,
    "synth.edge_prob": 0.5,
    "synth.train_n": 240,
    "synth.test_normal_n": 120,
    "synth.test_anomaly_n": 30,
    "synth.calibration_n": 2000,
    "phase1.embed_dim": 4,
    "phase1.hidden": 8,
    "phase1.inner_steps": 150,
    "phase1.max_rounds": 12,
    "phase1.sample_cap": 240,
    "phase1.refit_steps": 120,
    "phase2.hidden": 16,
    "phase2.bottleneck": 4,
    "phase2.batch": 64,
    "phase2.epochs": 12,
    "phase2.finetune_epochs": 3,
    "eval.sweep": [0.8, 0.9, 0.95]
}"#;

fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_envelope(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> usize {
    // Lines minus the metadata comment and the header.
    fs::read_to_string(path).unwrap().lines().count() - 2
}

#[test]
fn synth_is_deterministic_and_writes_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(cfad().args(["synth", "--config"]).arg(&config).arg("--out").arg(&a));
    run_ok(cfad().args(["synth", "--config"]).arg(&config).arg("--out").arg(&b));

    for name in ["train.csv", "test.csv", "train_cf.csv", "test_cf.csv", "spec.json"] {
        let left = fs::read(a.join("synth").join(name)).unwrap();
        let right = fs::read(b.join("synth").join(name)).unwrap();
        assert_eq!(left, right, "synth output {name} differs between identical runs");
    }
    assert_eq!(data_rows(&a.join("synth/train.csv")), 240);
    assert_eq!(data_rows(&a.join("synth/test.csv")), 150);
    assert_eq!(data_rows(&a.join("synth/test_cf.csv")), 150);

    let spec = read_envelope(&a.join("synth/spec.json"));
    assert_eq!(spec["stage"], "synth");
    assert_eq!(spec["payload"]["params"]["nodes"], 8);
}

#[test]
fn invalid_generation_parameters_exit_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, r#"{"synth.edge_prob": 1.5}"#).unwrap();
    let out = cfad()
        .args(["synth", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("edge_prob"));
}

#[test]
fn discover_without_synth_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = cfad()
        .args(["discover", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("empty"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing artifact"), "stderr: {stderr}");
    assert!(stderr.contains("synth/train.csv"), "stderr: {stderr}");
}

#[test]
fn pipeline_produces_the_full_artifact_tree() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let run = dir.path().join("run");
    run_ok(cfad().args(["pipeline", "--config"]).arg(&config).arg("--out").arg(&run));

    for name in [
        "synth/train.csv",
        "synth/test_cf.csv",
        "discover/estimate.json",
        "cf/train_cf.csv",
        "cf/test_cf.csv",
        "train/detector.json",
        "eval/report.json",
        "eval/summary.csv",
        "eval/sweep.csv",
        "eval/scores.csv",
        "manifest.json",
    ] {
        assert!(run.join(name).exists(), "pipeline did not write {name}");
    }

    let report = read_envelope(&run.join("eval/report.json"));
    assert_eq!(report["version"], 1);
    assert_eq!(report["stage"], "eval");
    assert_eq!(report["seed"], 0);
    let hash = report["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 16);
    let payload = &report["payload"];
    for key in ["auc_pr", "auc_roc", "macro_f1", "changing_ratio", "q", "tau"] {
        assert!(payload[key].is_number(), "report payload lacks {key}");
    }
    assert_eq!(payload["sweep"].as_array().unwrap().len(), 3);
    assert_eq!(payload["scores"].as_array().unwrap().len(), 150);

    let detector = read_envelope(&run.join("train/detector.json"));
    assert_eq!(detector["payload"]["finetuned"], true);
    assert!(detector["payload"]["discriminator"].is_object());
    assert_eq!(detector["config_hash"].as_str().unwrap(), hash);

    let manifest = read_envelope(&run.join("manifest.json"));
    let entries: Vec<&str> = manifest["payload"]["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["path"].as_str().unwrap())
        .collect();
    assert!(entries.contains(&"discover/estimate.json"));
    assert!(entries.contains(&"eval/report.json"));
    assert!(entries.iter().all(|p| !p.starts_with('/')), "manifest paths must be relative");

    // Re-running eval over the same artifacts reproduces every eval file
    // byte for byte.
    let before: Vec<Vec<u8>> = ["report.json", "summary.csv", "sweep.csv", "scores.csv"]
        .iter()
        .map(|n| fs::read(run.join("eval").join(n)).unwrap())
        .collect();
    run_ok(cfad().args(["eval", "--config"]).arg(&config).arg("--out").arg(&run));
    for (name, old) in ["report.json", "summary.csv", "sweep.csv", "scores.csv"].iter().zip(before) {
        let new = fs::read(run.join("eval").join(name)).unwrap();
        assert_eq!(new, old, "eval rerun changed {name}");
    }
}

#[test]
fn no_finetune_pipeline_skips_the_causal_stages() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let run = dir.path().join("run");
    run_ok(
        cfad()
            .args(["pipeline", "--no-finetune", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&run),
    );
    // The plain-autoencoder baseline needs neither the learned model nor
    // generated counterfactuals: the ground-truth files serve as the
    // fairness reference.
    assert!(!run.join("discover").exists());
    assert!(!run.join("cf").exists());
    assert!(run.join("eval/report.json").exists());

    let detector = read_envelope(&run.join("train/detector.json"));
    assert_eq!(detector["payload"]["finetuned"], false);
    assert!(detector["payload"]["discriminator"].is_null());
}

#[test]
fn seed_flag_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let mut body: serde_json::Map<String, Value> = serde_json::from_str(SMALL_CONFIG).unwrap();
    body.insert("seed".to_string(), Value::from(3));
    fs::write(&path, serde_json::to_string(&body).unwrap()).unwrap();

    let run = dir.path().join("run");
    run_ok(cfad().args(["synth", "--seed", "9", "--config"]).arg(&path).arg("--out").arg(&run));
    let first_line = fs::read_to_string(run.join("synth/train.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(first_line.contains("seed=9"), "metadata was {first_line}");
}

#[test]
fn runs_flag_requires_the_pipeline_command() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = cfad()
        .args(["synth", "--runs", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pipeline"));
}

#[test]
fn csv_source_pipeline_ingests_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();

    // A fabricated raw table: two numeric columns, one categorical, a
    // two-valued sensitive column, and a binary label with 50 positives.
    let mut raw = String::from("x1,x2,color,sex,label\n");
    for i in 0..400usize {
        let color = ["red", "green", "blue"][i % 3];
        let s = if i % 2 == 0 { "A" } else { "B" };
        let y = if i % 8 == 0 { "1" } else { "0" };
        raw.push_str(&format!("{},{},{color},{s},{y}\n", (i % 17) as f64 * 0.3, (i * 7 % 23) as f64 * 0.1));
    }
    let csv_path = dir.path().join("raw.csv");
    fs::write(&csv_path, raw).unwrap();

    let schema = r#"{
        "name": "toy",
        "columns": [
            { "name": "x1", "kind": "continuous" },
            { "name": "x2", "kind": "continuous" },
            { "name": "color", "kind": "categorical" },
            { "name": "sex", "kind": "sensitive" },
            { "name": "label", "kind": "label" }
        ],
        "sensitive_values": { "positive": ["A"], "negative": ["B"] },
        "anomaly": { "column": "label", "equals": "1" },
        "splits": { "train_normals": 120, "test_normals": 60, "test_anomalies": 20 }
    }"#;
    let schema_path = dir.path().join("schema.json");
    fs::write(&schema_path, schema).unwrap();

    let mut body: serde_json::Map<String, Value> = serde_json::from_str(SMALL_CONFIG).unwrap();
    body.insert("data.source".to_string(), Value::from("csv"));
    body.insert("data.csv".to_string(), Value::from(csv_path.to_str().unwrap()));
    body.insert("data.schema".to_string(), Value::from(schema_path.to_str().unwrap()));
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_string(&body).unwrap()).unwrap();

    let run = dir.path().join("run");
    run_ok(cfad().args(["pipeline", "--config"]).arg(&config).arg("--out").arg(&run));

    assert!(!run.join("synth").exists(), "csv runs must not fabricate a benchmark");
    assert!(run.join("discover/estimate.json").exists());
    assert!(run.join("cf/test_cf.csv").exists());
    let report = read_envelope(&run.join("eval/report.json"));
    assert_eq!(report["payload"]["scores"].as_array().unwrap().len(), 80);
}

#[test]
fn multi_run_pipeline_aggregates_seed_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let run = dir.path().join("run");
    run_ok(
        cfad()
            .args(["pipeline", "--runs", "2", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&run),
    );

    let mut macro_f1 = Vec::new();
    for seed in 0..2u64 {
        let report = read_envelope(&run.join(format!("seed-{seed}/eval/report.json")));
        assert_eq!(report["seed"], seed);
        macro_f1.push(report["payload"]["macro_f1"].as_f64().unwrap());
    }

    let aggregate = read_envelope(&run.join("aggregate.json"));
    assert_eq!(aggregate["stage"], "aggregate");
    let payload = &aggregate["payload"];
    assert_eq!(payload["runs"], 2);
    assert_eq!(payload["seeds"], serde_json::json!([0, 1]));
    assert_eq!(payload["per_seed"].as_array().unwrap().len(), 2);
    let mean = (macro_f1[0] + macro_f1[1]) / 2.0;
    assert!((payload["macro_f1"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert_eq!(payload["sweep"].as_array().unwrap().len(), 3);
    assert!(run.join("manifest.json").exists());
}

#[test]
fn out_root_env_var_sets_the_default_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let run = dir.path().join("from-env");
    run_ok(cfad().env("CFAD_OUT", &run).args(["synth", "--config"]).arg(&config));
    assert!(run.join("synth/train.csv").exists());
}
