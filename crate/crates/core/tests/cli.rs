use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn attnbias(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnbias"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn count_preset_prints_key_bias_share() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnbias(dir.path(), &["count", "--preset", "encdec-large"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("b_k share: 11.11%"), "{}", stdout(&o));
    let md = fs::read_to_string(dir.path().join("count.md")).unwrap();
    assert!(md.contains("| total | 331776 | 36864 |"), "{md}");
}

#[test]
fn count_numeric_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnbias(
        dir.path(),
        &["count", "--family", "encoder-only", "--d-model", "1024", "--enc-layers", "24", "--labels", "2", "--model-layer-norms", "1"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("b_k share: 1.86%"), "{}", stdout(&o));
    let o = attnbias(dir.path(), &["count"]);
    assert_eq!(o.status.code(), Some(2));
    let o = attnbias(dir.path(), &["count", "--preset", "huge"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("huge"));
}

#[test]
fn equivalence_thousand_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnbias(dir.path(), &["equivalence", "--trials", "1000", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = fs::read_to_string(dir.path().join("equivalence.md")).unwrap();
    assert!(md.contains("- status: pass"));
    assert!(md.contains("\"trials\":1000"));
    assert!(md.contains("\"seed\":7"));
    assert!(stderr(&o).contains("wall-clock"));
    assert!(!md.contains("wall-clock"));
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnbias(dir.path(), &["mutate", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn bad_config_and_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"trails": 10}"#).unwrap();
    let o = attnbias(dir.path(), &["equivalence", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trails"));
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(attnbias(dir.path(), &["gradcheck", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(attnbias(dir.path(), &["equivalence", "--precision", "f32-forward"]).status.code(), Some(2));
    assert_eq!(attnbias(dir.path(), &["equivalence", "--jobs", "0"]).status.code(), Some(2));
    assert_eq!(attnbias(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let help = attnbias(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("classify-mutate"));
}

#[test]
fn failing_criterion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.json");
    // Tolerances no rounding error can meet.
    fs::write(&cfg, r#"{"heads": [2], "seq_len": 4, "rel_tol": 0.0, "key_bias_max": 0.0}"#).unwrap();
    let o = attnbias(dir.path(), &["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL"));
    assert!(dir.path().join("gradcheck.md").exists());
}

#[test]
fn unmet_training_gate_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.json");
    fs::write(&cfg, r#"{"classifier": {"train": {"steps": 1, "batch_size": 4, "lr": 0.001}, "n_eval": 50}}"#).unwrap();
    let o = attnbias(dir.path(), &["classify-mutate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("accuracy"), "{}", stderr(&o));
}

#[test]
fn csv_output_has_metadata_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnbias(dir.path(), &["equivalence", "--trials", "20", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("equivalence.csv")).unwrap();
    assert!(csv.contains("\r\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("equivalence.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["trials"], 20);
    assert!(meta["version"].is_string());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = a.path().join("mutate.json");
    fs::write(&cfg, r#"{"n_layers": 2, "n_inputs": 5, "max_len": 12}"#).unwrap();
    let args = ["mutate", "--config", cfg.to_str().unwrap(), "--seed", "3"];
    assert_eq!(attnbias(a.path(), &args).status.code(), attnbias(b.path(), &args).status.code());
    assert_eq!(
        fs::read(a.path().join("mutate.md")).unwrap(),
        fs::read(b.path().join("mutate.md")).unwrap()
    );
}
