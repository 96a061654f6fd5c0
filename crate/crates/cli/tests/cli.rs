use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const LEWIS: &str = r#"{"scenario": {"kind": "lewis_sweep", "n_types": [2], "n_signals": [2],
    "train": {"max_rounds": 5000, "window": 500}}, "seeds": [0, 1]}"#;

fn smc(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_smc"));
    cmd.args(args).env_remove("SMC_OUT_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn validate_accepts_good_and_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), "good.json", LEWIS);
    let o = smc(&["validate", &good], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("lewis_sweep with 2 seed(s)"));

    let bad = write_config(tmp.path(), "bad.json", r#"{"scenario": {"kind": "lewis_sweep", "n_typs": [2]}}"#);
    let o = smc(&["validate", &bad], &[]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["module"], "harness");
    assert!(err["message"].as_str().unwrap().contains("n_typs"));
}

#[test]
fn run_then_report_with_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lewis.json", LEWIS);
    let out = tmp.path().join("run");
    let o = smc(&["run", &cfg, "--seed", "7", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), out.to_string_lossy());
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seeds"], serde_json::json!([7]));

    let o = smc(&["report", out.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("scenario: lewis_sweep") && text.contains("checksums ok"), "{text}");
}

#[test]
fn out_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lewis.json", LEWIS);
    let root = tmp.path().join("root");
    let o = smc(&["run", &cfg, "--out", "relative"], &[("SMC_OUT_ROOT", &root)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("relative").join("manifest.json").is_file());
}

#[test]
fn failing_run_writes_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad_window.json",
        r#"{"scenario": {"kind": "lewis_sweep", "n_types": [2], "n_signals": [2],
            "train": {"max_rounds": 100, "window": 100}}}"#,
    );
    let out = tmp.path().join("failed");
    let o = smc(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["module"], "lewis");
    assert!(err["message"].as_str().unwrap().contains("window"));
}

#[test]
fn extract_rebuilds_the_policy_from_saved_actors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "marl.json",
        r#"{"scenario": {"kind": "marl_extract", "marl": {"episodes": 3000}}, "seeds": [0]}"#,
    );
    let run = tmp.path().join("marl");
    assert!(smc(&["run", &cfg, "--out", run.to_str().unwrap()], &[]).status.success());
    let actors = run.join("seed_0").join("actors");
    let out = tmp.path().join("graph");
    let o = smc(
        &["extract", actors.to_str().unwrap(), "--out", out.to_str().unwrap(), "--radius", "1", "--weighting", "uniform"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["policy.pl", "graph.json", "graph.dot", "metrics.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let missing = smc(&["extract", tmp.path().to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(out.join("error.json").is_file());
}
