//! End-to-end scenario runs through the harness.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use smc_core::harness::{extract, report, run_scenario, ExperimentConfig, RunManifest, RunOptions};
use smc_core::lewis::{check_profile, classify_sender_map, GreedyProfile, SignalingGame};
use smc_core::sm::sha256_hex;
use smc_core::symbolic::{parse_problog, MergeRule, SymbolicGraph, Weighting};
use smc_core::sync::SyncReport;
use smc_core::{DenseNet, DiscreteChannel};

fn run(config: &str, out: &Path) -> (std::path::PathBuf, serde_json::Value) {
    let cfg = ExperimentConfig::from_json(config).unwrap();
    let opts = RunOptions {
        out: Some(out.to_path_buf()),
        ..RunOptions::default()
    };
    let outcome = run_scenario(&cfg, &opts).unwrap();
    let metrics = serde_json::from_str(&outcome.metrics).unwrap();
    (outcome.dir, metrics)
}

fn walk(dir: &Path, root: &Path, acc: &mut BTreeSet<String>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            walk(&p, root, acc);
        } else {
            acc.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
        }
    }
}

/// Every file but the manifest itself is listed with a matching checksum.
fn assert_manifest_complete(dir: &Path) -> RunManifest {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let mut on_disk = BTreeSet::new();
    walk(dir, dir, &mut on_disk);
    on_disk.remove("manifest.json");
    let listed: BTreeSet<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    assert_eq!(on_disk, listed);
    for f in &manifest.files {
        let bytes = fs::read(dir.join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes, "{}", f.path);
        assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
    }
    manifest
}

#[test]
fn lewis_sweep_cells_agree_with_game_oracles() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, metrics) = run(
        r#"{"scenario": {"kind": "lewis_sweep", "n_types": [2, 3], "n_signals": [1, 2, 3]}, "seeds": [0, 1]}"#,
        tmp.path(),
    );
    assert_manifest_complete(&dir);
    let cells = metrics["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2 * 3 * 2);
    for c in cells {
        let t = c["n_types"].as_u64().unwrap() as usize;
        let s = c["n_signals"].as_u64().unwrap() as usize;
        let game = SignalingGame::identity(t, t, DiscreteChannel::identity(s).unwrap()).unwrap();
        let profile = GreedyProfile {
            sender: serde_json::from_value(c["sender_map"].clone()).unwrap(),
            receiver: serde_json::from_value(c["receiver_map"].clone()).unwrap(),
        };
        let optimum = t.min(s) as f64 / t as f64;
        assert!((c["pure_optimum"].as_f64().unwrap() - optimum).abs() < 1e-11);
        assert_eq!(c["is_nash"].as_bool().unwrap(), check_profile(&game, &profile).is_nash);
        assert_eq!(c["classification"], serde_json::to_value(classify_sender_map(&profile.sender)).unwrap());
    }
    assert!(report(&dir).unwrap().contains("lewis_sweep"));
}

#[test]
fn hetero_sync_run_writes_report_models_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, metrics) = run(r#"{"scenario": {"kind": "hetero_sync", "sync_epochs": 10}, "seeds": [3]}"#, tmp.path());
    let manifest = assert_manifest_complete(&dir);
    assert_eq!(manifest.scenario, "hetero_sync");
    let seed_dir = dir.join("seed_3");
    let report_file: SyncReport = serde_json::from_slice(&fs::read(seed_dir.join("sync_report.json")).unwrap()).unwrap();
    assert_eq!(report_file.strategies.len(), 3);
    assert_eq!(metrics["reports"][0]["seed"], 3);
    for name in ["alice.encoder", "bob.generator", "carol.encoder", "david.generator"] {
        let net = DenseNet::from_bytes(&fs::read(seed_dir.join(format!("models/{name}.smnn"))).unwrap()).unwrap();
        assert!(net.param_count() > 0);
    }
    let split: smc_core::data::SplitManifest =
        serde_json::from_slice(&fs::read(seed_dir.join("split.json")).unwrap()).unwrap();
    assert!(split.is_partition_of(split.train.len() + split.heldout.len()));
    let csv = fs::read_to_string(seed_dir.join("loss_curves.csv")).unwrap();
    assert!(csv.starts_with("curve,epoch,mse\n"));
    let text = report(&dir).unwrap();
    assert!(text.contains("download_partial_upload") || text.contains("ordering"), "{text}");
}

#[test]
fn marl_extract_run_matches_standalone_extraction() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, metrics) = run(
        r#"{"scenario": {"kind": "marl_extract", "marl": {"episodes": 6000}}, "seeds": [2]}"#,
        tmp.path(),
    );
    assert_manifest_complete(&dir);
    let seed_dir = dir.join("seed_2");
    let messages = fs::read_to_string(seed_dir.join("messages.csv")).unwrap();
    assert!(messages.starts_with("state,m0,m1,action\n"), "{messages}");
    let policy = fs::read_to_string(seed_dir.join("policy.pl")).unwrap();
    let program = parse_problog(&policy).unwrap();
    assert_eq!(program.clauses.len() as u64, metrics["results"][0]["clauses"].as_u64().unwrap());
    let graph: SymbolicGraph = serde_json::from_slice(&fs::read(seed_dir.join("graph.json")).unwrap()).unwrap();
    assert_eq!(graph.edges().len(), program.clauses.len());

    let out = tmp.path().join("extracted");
    extract(&seed_dir.join("actors"), &out, MergeRule::ExactCell, Weighting::Support).unwrap();
    assert_manifest_complete(&out);
    assert_eq!(fs::read_to_string(out.join("policy.pl")).unwrap(), policy);
    assert_eq!(metrics["results"][0]["fidelity"], 0.0);
    assert!(report(&dir).unwrap().contains("marl_extract"));
}

#[test]
fn tampered_output_fails_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = run(
        r#"{"scenario": {"kind": "lewis_sweep", "n_types": [2], "n_signals": [2]}, "seeds": [0]}"#,
        tmp.path(),
    );
    fs::write(dir.join("metrics.json"), "{}").unwrap();
    let err = report(&dir).unwrap_err();
    assert_eq!(err.module(), "harness");
    assert!(err.to_string().contains("checksum"), "{err}");
}
