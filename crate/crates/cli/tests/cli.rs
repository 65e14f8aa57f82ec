use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bst")).args(args).output().expect("spawn bst")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_TRAIN: &str = r#"{
  "schema_version": 1,
  "problem": {
    "kind": "layered_quadratic",
    "geometry": [
      { "name": "a", "kind": "sign", "shape": [6], "radius_eta": 1.0 },
      { "name": "b", "kind": "spectral", "shape": [3, 4], "radius": 0.5 }
    ],
    "curvatures": [1.0, 3.0],
    "noise": { "sigma_star": 0.2 }
  },
  "optimizer": {
    "alpha": 0.3,
    "beta_schedule": { "kind": "theorem_prescribed", "c": 1.0, "K": 10 },
    "iters": 10,
    "seed": 3
  }
}"#;

#[test]
fn train_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL_TRAIN);
    let out = dir.path().join("out");
    let o = bst(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("runlog.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,loss,x_primal,g_dual,m_dual,beta,step_disp,stage");
    assert_eq!(lines.count(), 10);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["invariant_violations"], 0);
    assert!(summary["final_loss"].as_f64().unwrap() >= 0.0);
    // the resolved config is embedded, defaults included
    assert_eq!(summary["config"]["optimizer"]["polar"]["method"], "newton_schulz");
}

#[test]
fn train_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL_TRAIN);
    let runs: Vec<String> = ["o1", "o2"]
        .iter()
        .map(|d| {
            let out = dir.path().join(d);
            let o = bst(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            assert!(o.status.success());
            fs::read_to_string(out.join("runlog.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn staged_train_marks_both_stages() {
    let dir = tempfile::tempdir().unwrap();
    let o = bst(&[
        "train",
        "--config",
        configs().join("staged.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("runlog.csv")).unwrap();
    let mut stages: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    stages.dedup();
    assert_eq!(stages, ["0", "1"]);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let typo = SMALL_TRAIN.replace("\"seed\"", "\"sed\"");
    let cfg = write(dir.path(), "c.json", &typo);
    let o = bst(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let v2 = SMALL_TRAIN.replace("\"schema_version\": 1", "\"schema_version\": 2");
    let cfg = write(dir.path(), "c2.json", &v2);
    let o = bst(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_csv_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "e.csv", "");
    let header_only = write(dir.path(), "h.csv", "loss,g_dual\n");
    for f in [&empty, &header_only] {
        let o = bst(&["estimate", "--kind", "mu", "--in", f.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{}", f.display());
    }
}

#[test]
fn bad_cell_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "b.csv", "loss,g_dual\n1,2\n2,oops\n");
    let o = bst(&["estimate", "--kind", "mu", "--in", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn estimate_mu_exact_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("loss,g_dual\n");
    for i in 1..=20 {
        let f = 0.05 * i as f64;
        text.push_str(&format!("{f},{}\n", 3.1 * f));
    }
    let f = write(dir.path(), "mu.csv", &text);
    let o = bst(&["estimate", "--kind", "mu", "--in", f.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 3.1).abs() < 1e-9);
    assert_eq!(v["estimator"], "mu");
    assert_eq!(v["n_points"], 20);
}

#[test]
fn estimate_l_from_train_output() {
    let dir = tempfile::tempdir().unwrap();
    let noiseless = SMALL_TRAIN.replace("\"sigma_star\": 0.2", "\"sigma_star\": 0.0").replace(
        "\"kind\": \"sign\", \"shape\": [6], \"radius_eta\": 1.0",
        "\"kind\": \"euclidean\", \"shape\": [6], \"radius_eta\": 1.0",
    );
    let cfg = write(dir.path(), "c.json", &noiseless);
    let out = dir.path().join("o");
    assert!(bst(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let o = bst(&["estimate", "--kind", "L", "--in", out.join("curvature.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let l = v["value"].as_f64().unwrap();
    assert!(l > 0.0 && l.is_finite());
    assert_eq!(v["window"], 100);
}

#[test]
fn plan_model_size_124m_to_1b() {
    let o = bst(&["plan", "--rule", "model-size", "--inputs", configs().join("model_size.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["bs_factor"].as_f64().unwrap() - 4.37).abs() <= 0.01);
    assert!((v["beta_factor"].as_f64().unwrap() - 0.54).abs() <= 0.01);
    for key in ["rule", "inputs", "BS1", "B1", "S1", "beta1", "alpha1", "regime_at_choice"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["inputs"]["consts1"]["rho"], 111.9);
}

#[test]
fn plan_sqrt_and_contradiction() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "s.json",
        r#"{ "base": { "B0": 256, "S0": 1024, "beta0": 3.6e-4, "alpha0": 0.1, "T0": 1 }, "T1": 8 }"#,
    );
    let o = bst(&["plan", "--rule", "sqrt", "--inputs", f.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["beta_factor"].as_f64().unwrap() - 0.3536).abs() < 1e-4);

    let bad = write(
        dir.path(),
        "b.json",
        r#"{ "base": { "B0": 256, "S0": 1024, "beta0": 3.6e-4, "alpha0": 0.1, "T0": 1 }, "T1": 8,
             "consts0": { "L": 1, "mu": 1, "rho": 1 }, "shape0": { "n_layer": 12, "n_embd": 768, "batch": 256 },
             "consts1": { "L": 1, "mu": 1, "rho": 1 } }"#,
    );
    assert_eq!(bst(&["plan", "--rule", "model-size", "--inputs", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn fit_recovers_mu_law() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("n_layer,value\n");
    for n in [2.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0] {
        text.push_str(&format!("{n},{}\n", 5.2 * f64::powf(n + 1.7, -0.2)));
    }
    let data = write(dir.path(), "d.csv", &text);
    let o = bst(&["fit", "--shape", configs().join("mu_shape.json").to_str().unwrap(), "--in", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let e = v["model"]["terms"][0]["exponent"].as_f64().unwrap();
    assert!((e / -0.2 - 1.0).abs() < 0.05, "exponent {e}");
}

#[test]
fn sweep_jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("sweep.json"))
        .unwrap()
        .replace("\"max_exp\": 14", "\"max_exp\": 6")
        .replace("\"T\": 65536", "\"T\": 4096")
        .replace("\"repetitions\": 5", "\"repetitions\": 2");
    let cfg = write(dir.path(), "s.json", &text);
    let outs: Vec<String> = ["1", "4"]
        .iter()
        .map(|j| {
            let out = dir.path().join(format!("o{j}"));
            let o = bst(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", j]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            fs::read_to_string(out.join("sweep.csv")).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0].lines().count(), 8);
}

#[test]
fn unknown_rule_is_usage_error() {
    assert_eq!(bst(&["plan", "--rule", "cosine", "--inputs", "x"]).status.code(), Some(2));
}
