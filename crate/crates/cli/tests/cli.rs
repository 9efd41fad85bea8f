use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "environment": {"m": 6, "K": 8, "d": 3, "seed": 11, "num_clusters": 3},
  "n": 600,
  "methods": [
    {"name": "ips"}, {"name": "cips", "tau": 0.1},
    {"name": "dr", "reward_model": {"kind": "perturbed", "delta": 0.2}},
    {"name": "mips"}, {"name": "offcem"}, {"name": "potec"},
    {"name": "lpi"}, {"name": "clpi"}, {"name": "regkl", "beta": 0.5}
  ],
  "train": {"epochs": 2, "batch_sizes": [100, 600], "schedules": ["constant", "cosine"]},
  "mse": {"seeds": [0, 1], "targets": [{"kind": "uniform"}, {"kind": "logging"}]},
  "params": {"light": {"kind": "linear"}, "heavy": {"kind": "inner-product", "p": 2, "hidden": 8}, "seeds": [0, 1, 2]},
  "landscape": {
    "plateau": {"ks": [4, 8], "gap": 0.5, "init_bias": 2, "base_rate": 5, "budget": 30, "threshold": 0.1},
    "census": {"contexts": 2, "K": 4, "epsilon": 0.1, "gap": 0.4, "spread": 0.3, "restarts": 3,
               "sigma": 2, "epochs": 200, "base_rate": 2, "pwll_l2": 0.01, "ope_l2": 0.001}
  }
}"#;

fn opl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opl")).args(args).output().expect("spawn opl")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn landscape_only(text: &str) -> String {
    // landscape probes have no clustering; keep methods that do not need one
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["methods"] = serde_json::json!([{"name": "ips"}, {"name": "lpi", "l2": 0.01}]);
    v.to_string()
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            csv_files(&p, out);
        } else if p.extension().is_some_and(|x| x == "csv" || x == "svg" || x == "json") {
            out.push(p);
        }
    }
    out.sort();
}

fn run_twice(cmd: &str, config_text: &str, extra: &[&str]) -> (tempfile::TempDir, tempfile::TempDir) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (i, dir) in [&a, &b].into_iter().enumerate() {
        let cfg = write_config(dir.path(), config_text);
        let out = dir.path().join("out");
        let workers = if i == 0 { "1" } else { "3" };
        let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers];
        args.extend_from_slice(extra);
        let o = opl(&args);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    csv_files(&a.path().join("out"), &mut fa);
    csv_files(&b.path().join("out"), &mut fb);
    assert!(!fa.is_empty(), "{cmd} wrote nothing");
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{cmd}: {} differs", x.display());
    }
    (a, b)
}

#[test]
fn generate_writes_environment_dataset_and_oracles() {
    let (a, _) = run_twice("generate", SMALL, &[]);
    let out = a.path().join("out");
    assert!(out.join("environment.json").exists());
    let ds = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(ds.lines().count(), 601);
    assert_eq!(std::fs::read_dir(out.join("oracles")).unwrap().count(), 9);
}

#[test]
fn train_then_evaluate() {
    let (a, _) = run_twice("train", SMALL, &[]);
    let out = a.path().join("out");
    let runs = std::fs::read_to_string(out.join("train.csv")).unwrap();
    assert_eq!(runs.lines().count(), 10);
    let cfg = a.path().join("config.json");
    let policy = out.join("policies/policy_06.json");
    let o = opl(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--policy", policy.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ev = std::fs::read_to_string(out.join("evaluate.csv")).unwrap();
    assert_eq!(ev.lines().count(), 10);
}

#[test]
fn sweep_is_byte_reproducible_across_worker_counts() {
    let (a, _) = run_twice("sweep", SMALL, &[]);
    let out = a.path().join("out");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,oracle,"));
    assert_eq!(summary.lines().count(), 10);
    assert!(summary.contains("clpi[tau=0.05;l2=0],cips,"));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 9 * 4);
}

#[test]
fn mse_params_and_landscape_are_reproducible() {
    run_twice("mse", SMALL, &[]);
    run_twice("params-report", SMALL, &[]);
    let (a, _) = run_twice("landscape", &landscape_only(SMALL), &[]);
    assert!(a.path().join("out/plateau.csv").exists());
    assert!(a.path().join("out/census.csv").exists());
}

#[test]
fn seed_flag_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut data = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("out{seed}"));
        let o = opl(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        data.push(std::fs::read(out.join("dataset.csv")).unwrap());
    }
    assert_ne!(data[0], data[1]);
}

#[test]
fn chart_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("in.csv");
    std::fs::write(&csv, "method,x,y\na,0,1\na,1,2\nb,0,0.5\nb,1,0.7\n").unwrap();
    let svg = dir.path().join("c.svg");
    let o = opl(&["chart", "--input", csv.to_str().unwrap(), "--x", "x", "--y", "y", "--series", "method", "--output", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 2);
    let o = opl(&["chart", "--input", csv.to_str().unwrap(), "--y", "nope", "--output", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad = write_config(dir.path(), "{ not json");
    assert_eq!(opl(&["sweep", "--config", bad.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    let empty = write_config(dir.path(), r#"{"environment": {"m": 2, "K": 3, "d": 2, "seed": 0}, "methods": []}"#);
    assert_eq!(opl(&["sweep", "--config", empty.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    assert_eq!(opl(&["sweep", "--out", out]).status.code(), Some(2));

    // the second batch size exceeds n, so those runs fail
    let failing = write_config(
        dir.path(),
        r#"{"environment": {"m": 2, "K": 3, "d": 2, "seed": 0}, "n": 50, "methods": [{"name": "ips"}],
            "train": {"epochs": 1, "batch_sizes": [10, 500]}}"#,
    );
    let c = failing.to_str().unwrap();
    assert_eq!(opl(&["sweep", "--config", c, "--out", out]).status.code(), Some(0));
    assert_eq!(opl(&["sweep", "--config", c, "--out", out, "--strict"]).status.code(), Some(3));
    let runs = std::fs::read_to_string(dir.path().join("out/runs.csv")).unwrap();
    assert!(runs.contains("batch size must be in"));
}
