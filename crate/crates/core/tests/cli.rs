use std::path::Path;
use std::process::{Command, Output};

use maxent_reversal::cli::load_panel;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maxent-reversal"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, out: &str, j: &str, n: &str, t: &str, seed: &str) {
    let o = run(
        dir,
        &[
            "simulate",
            "--homogeneous",
            j,
            "--n",
            n,
            "--t",
            t,
            "--seed",
            seed,
            "--out",
            out,
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_on_synthetic_sample_converges() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "0.2", "5", "1500", "3");
    let o = run(dir.path(), &["fit", "--panel", "sim/panel.json", "--out", "fit"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("fit/fit_report.json"));
    assert_eq!(report["converged"], Value::Bool(true));
    let params = json(&dir.path().join("fit/couplings.json"));
    assert_eq!(params["n"], 5);
    let j01 = params["j"][0][1].as_f64().unwrap();
    assert!((j01 - 0.2).abs() < 0.15, "recovered J = {j01}");
    assert!(report["inputs"][0]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn missing_input_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["fit", "--panel", "absent.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.json"));
}

#[test]
fn malformed_panel_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"entities":["a"],"timestamps":["0"],"signs":[[2]]}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["fit", "--panel", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn two_lags_write_two_lag_matrices() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "0.1", "4", "800", "1");
    let o = run(
        dir.path(),
        &["fit", "--panel", "sim/panel.json", "--lags", "2", "--out", "fit"],
    );
    assert!(o.status.success());
    let params = json(&dir.path().join("fit/couplings.json"));
    assert_eq!(params["l"], 2);
    let k = params["k"].as_array().unwrap();
    assert_eq!(k.len(), 2);
    for m in k {
        assert_eq!(m.as_array().unwrap().len(), 4);
    }
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "a", "0.1", "8", "2500", "7");
    simulate(dir.path(), "b", "0.1", "8", "2500", "7");
    let a = std::fs::read(dir.path().join("a/panel.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/panel.json")).unwrap();
    assert_eq!(a, b);
    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["provenance"]["generator"], "glauber");
    assert_eq!(doc["provenance"]["seed"], 7);
}

#[test]
fn exact_flag_uses_enumeration_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["simulate", "--homogeneous", "0.3", "--n", "4", "--t", "100", "--exact"],
    );
    assert!(o.status.success());
    let doc = json(&dir.path().join("out/panel.json"));
    assert_eq!(doc["provenance"]["generator"], "exact");
    assert!(doc["provenance"]["burn_in_records"].is_null());
}

#[test]
fn exact_sampler_beyond_cap_exits_with_capacity_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["simulate", "--homogeneous", "0.1", "--n", "24", "--t", "10", "--exact"],
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn simulated_panel_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "0.15", "5", "300", "11");
    let panel = load_panel(&dir.path().join("sim/panel.json")).unwrap();
    assert_eq!(panel.n_entities(), 5);
    assert_eq!(panel.n_bins(), 300);
    let doc = json(&dir.path().join("sim/panel.json"));
    let signs: Vec<Vec<i8>> = serde_json::from_value(doc["signs"].clone()).unwrap();
    assert_eq!(signs, panel.signs);
}

#[test]
fn unknown_study_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["evaluate", "--study", "astrology", "--panel", "p.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cv_on_uncoupled_panel_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "0", "6", "3000", "5");
    let o = run(
        dir.path(),
        &["evaluate", "--study", "cv", "--panel", "sim/panel.json", "--out", "ev"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&dir.path().join("ev/study_cv.json"));
    let auc = doc["summary"]["mean_auc"].as_f64().unwrap();
    assert!((auc - 0.5).abs() < 0.04, "AUC {auc}");
    let csv = std::fs::read_to_string(dir.path().join("ev/study_cv.csv")).unwrap();
    assert!(csv.starts_with("# schema_version=1"));
    assert_eq!(csv.lines().count(), 2 + 10);
}

#[test]
fn ingest_writes_sign_and_reversal_panels() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "timestamp,entity,open,close\n\
               1,A,10,11\n1,B,5,4\n\
               2,A,11,10\n2,B,4,4\n\
               3,A,10,12\n3,B,4,5\n\
               4,A,12,13\n";
    std::fs::write(dir.path().join("prices.csv"), csv).unwrap();
    let o = run(dir.path(), &["ingest", "--input", "prices.csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let panel = load_panel(&dir.path().join("out/signs.json")).unwrap();
    assert_eq!(panel.entities, vec!["A", "B"]);
    assert_eq!(panel.signs, vec![vec![1, -1, 1], vec![-1, 1, 1]]);
    let rev = json(&dir.path().join("out/reversals.json"));
    assert_eq!(rev["flips"], serde_json::json!([[1, 1], [1, 0]]));
    let report = json(&dir.path().join("out/ingest_report.json"));
    assert_eq!(report["dropped_bins"], 1);
    assert_eq!(report["zero_returns"], 1);
}

#[test]
fn replayed_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim", "0.2", "4", "600", "2");
    let o = run(
        dir.path(),
        &[
            "--seed",
            "9",
            "evaluate",
            "--study",
            "cv",
            "--panel",
            "sim/panel.json",
            "--folds",
            "5",
            "--out",
            "a",
        ],
    );
    assert!(o.status.success());
    let o = run(
        dir.path(),
        &["--config", "a/run_config.json", "--out", "b", "--threads", "1"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run_config.json", "study_cv.json", "study_cv.csv", "study_cv_curve.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}
