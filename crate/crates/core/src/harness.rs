//! Experiment runner: strict JSON configs, scenario orchestration and
//! checksummed artifacts.
//!
//! A run directory holds `config.json` (the effective config), `metrics.json`
//! (floats rounded to 12 significant digits, no timestamps or paths, so equal
//! config and seeds give byte-identical files), per-seed artifacts, and
//! `manifest.json` listing every other file with its SHA-256.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::channel::DiscreteChannel;
use crate::error::{Error, Result};
use crate::lewis::{pure_profile_optimum, train_to_equilibrium, EquilibriumClass, SignalingGame, TrainConfig};
use crate::marl::{
    ctde_train, emergent_sr_report, execute, write_log_csv, Actors, MarlConfig, Quantization, ReferentialEnv,
};
use crate::nn::DenseNet;
use crate::rng::RngSeed;
use crate::sm::sha256_hex;
use crate::symbolic::{
    build_graph, cluster_srs, emit_problog, enumerate_mappings, expression_entropy, fidelity_against, graph_entropy,
    MergeRule, Weighting, DEFAULT_STATE_CAP,
};
use crate::sync::{compare_strategies, write_curves_csv, Strategy, SyncConfig, SyncReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("run directory {}: {reason}", path.display())]
    RunDir { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    }
}

/// Relative output directories resolve against this directory when set.
pub const OUT_ROOT_ENV: &str = "SMC_OUT_ROOT";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";
pub const ACTORS_FILE: &str = "actors.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    LewisSweep(LewisSweepParams),
    HeteroSync(SyncConfig),
    MarlExtract(MarlExtractParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LewisSweepParams {
    pub n_types: Vec<usize>,
    pub n_signals: Vec<usize>,
    /// Defaults to the cell's type count.
    pub n_responses: Option<usize>,
    /// Symbol error probability of a symmetric channel over the signals.
    pub channel_error: f64,
    pub train: TrainConfig,
}

impl Default for LewisSweepParams {
    fn default() -> Self {
        Self {
            n_types: vec![2, 3],
            n_signals: vec![2, 3],
            n_responses: None,
            channel_error: 0.0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarlExtractParams {
    pub n_targets: usize,
    /// The `seed` field is replaced by each entry of the seed list.
    pub marl: MarlConfig,
    pub merge_rule: MergeRule,
    pub weighting: Weighting,
    pub execution_episodes: usize,
}

impl Default for MarlExtractParams {
    fn default() -> Self {
        Self {
            n_targets: 4,
            marl: MarlConfig::default(),
            merge_rule: MergeRule::ExactCell,
            weighting: Weighting::Support,
            execution_episodes: 400,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| -> Result<()> { Err(HarnessError::Config(m).into()) };
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        match &self.scenario {
            Scenario::LewisSweep(p) => {
                if p.n_types.is_empty() || p.n_signals.is_empty() {
                    return bad("lewis_sweep needs non-empty n_types and n_signals".into());
                }
                if p.n_types.iter().chain(&p.n_signals).chain(&p.n_responses).any(|&n| n == 0) {
                    return bad("lewis_sweep sizes must be positive".into());
                }
                for &s in &p.n_signals {
                    DiscreteChannel::symmetric(s, p.channel_error)?;
                }
            }
            Scenario::HeteroSync(c) => {
                c.ab_channel.build()?;
                c.cd_channel.build()?;
                if !(0.0..=1.0).contains(&c.unfreeze_fraction) {
                    return bad(format!("unfreeze_fraction {} outside [0, 1]", c.unfreeze_fraction));
                }
                if c.n_per_class == 0 || c.train.batch_size == 0 {
                    return bad("n_per_class and batch_size must be positive".into());
                }
            }
            Scenario::MarlExtract(p) => {
                ReferentialEnv::new(p.n_targets)?;
                p.marl.validate()?;
            }
        }
        Ok(())
    }

    pub fn scenario_name(&self) -> &'static str {
        match self.scenario {
            Scenario::LewisSweep(_) => "lewis_sweep",
            Scenario::HeteroSync(_) => "hetero_sync",
            Scenario::MarlExtract(_) => "marl_extract",
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the config's seed list with this single seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub out_root: Option<PathBuf>,
}

/// `--out`, else the config's directory, else `runs/<scenario>`; relative
/// paths are joined onto the output root when one is set.
pub fn resolve_output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    let dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.scenario_name()));
    match &opts.out_root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir,
    }
}

pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Rounds every non-integer number to 12 significant digits.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => n
            .as_f64()
            .and_then(|f| serde_json::Number::from_f64(round_sig(f)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

pub fn metrics_json<T: Serialize>(value: &T) -> String {
    let v = round_floats(serde_json::to_value(value).expect("metrics serialize"));
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub scenario: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
}

struct Artifacts {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn write_metrics<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, metrics_json(value).as_bytes())
    }

    fn write_net(&mut self, rel: &str, net: &DenseNet) -> Result<()> {
        self.write(rel, &net.to_bytes())
    }

    fn finish(mut self, scenario: &str, config_sha256: String, seeds: Vec<u64>) -> Result<PathBuf> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            scenario: scenario.into(),
            config_sha256,
            seeds,
            files: self.files,
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(self.root)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LewisCellResult {
    pub n_types: usize,
    pub n_signals: usize,
    pub n_responses: usize,
    pub seed: u64,
    pub converged: bool,
    pub rounds: usize,
    pub greedy_payoff: f64,
    pub pure_optimum: f64,
    pub classification: EquilibriumClass,
    pub is_nash: bool,
    pub sender_map: Vec<usize>,
    pub receiver_map: Vec<usize>,
}

pub fn run_lewis_sweep(p: &LewisSweepParams, seeds: &[u64]) -> Result<Vec<LewisCellResult>> {
    let mut jobs = Vec::new();
    for (cell, (&t, &s)) in p
        .n_types
        .iter()
        .flat_map(|t| p.n_signals.iter().map(move |s| (t, s)))
        .enumerate()
    {
        for &seed in seeds {
            jobs.push((cell as u64, t, s, seed));
        }
    }
    jobs.into_par_iter()
        .map(|(cell, t, s, seed)| {
            let r = p.n_responses.unwrap_or(t);
            let game = SignalingGame::identity(t, r, DiscreteChannel::symmetric(s, p.channel_error)?)?;
            let (_, report) = train_to_equilibrium(&game, &p.train, &mut RngSeed(seed).stream(cell))?;
            Ok(LewisCellResult {
                n_types: t,
                n_signals: s,
                n_responses: r,
                seed,
                converged: report.converged,
                rounds: report.rounds,
                greedy_payoff: report.greedy_payoff,
                pure_optimum: pure_profile_optimum(&game)?,
                classification: report.classification,
                is_nash: report.is_nash,
                sender_map: report.greedy.sender,
                receiver_map: report.greedy.receiver,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorsManifest {
    pub n_targets: usize,
    pub message_dim: usize,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarlSeedResult {
    pub seed: u64,
    pub final_train_reward: f64,
    pub exec_reward_real: f64,
    pub exec_reward_quantized: f64,
    pub mutual_information_bits: f64,
    pub n_sr_clusters: usize,
    pub graph_entropy_bits: f64,
    pub node_entropy_bits: Vec<(usize, f64)>,
    pub fidelity: f64,
    pub clauses: usize,
}

/// Files of one extraction, relative to its directory.
struct Extraction {
    files: Vec<(String, Vec<u8>)>,
    n_clusters: usize,
    graph_entropy: f64,
    node_entropy: Vec<(usize, f64)>,
    fidelity: f64,
    clauses: usize,
}

fn extract_graph(
    actors: &Actors,
    env: &ReferentialEnv,
    levels: usize,
    rule: MergeRule,
    weighting: Weighting,
) -> Result<Extraction> {
    let table = enumerate_mappings(actors, env, levels, DEFAULT_STATE_CAP)?;
    let clustered = cluster_srs(&table, rule);
    let graph = build_graph(&clustered)?;
    let program = emit_problog(&graph);
    let node_entropy = graph
        .sr_nodes()
        .map(|sr| Ok((sr, expression_entropy(&graph, sr)?)))
        .collect::<Result<Vec<_>>>()?;
    let mapping = serde_json::to_vec_pretty(&clustered).expect("table serializes");
    let graph_json = serde_json::to_vec_pretty(&graph).expect("graph serializes");
    Ok(Extraction {
        n_clusters: clustered.dictionary.n_clusters(),
        graph_entropy: graph_entropy(&graph, weighting),
        fidelity: fidelity_against(&graph, &table)?,
        clauses: program.lines().count(),
        node_entropy,
        files: vec![
            ("mapping.json".into(), mapping),
            ("graph.json".into(), graph_json),
            ("graph.dot".into(), graph.to_dot().into_bytes()),
            ("policy.pl".into(), program.into_bytes()),
        ],
    })
}

fn curve_csv(values: &[f64], stride: usize) -> Vec<u8> {
    let mut s = String::from("episode,reward_avg\n");
    for (i, v) in values.iter().enumerate() {
        if i % stride == 0 || i + 1 == values.len() {
            s.push_str(&format!("{i},{v:?}\n"));
        }
    }
    s.into_bytes()
}

/// Relative path and contents of files produced off the writer thread.
type NamedFiles = Vec<(String, Vec<u8>)>;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: String,
}

/// Runs the configured scenario and writes its run directory.
pub fn run_scenario(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    let dir = resolve_output_dir(&cfg, opts);
    let mut art = Artifacts::create(&dir)?;
    let hash = cfg.sha256();
    let name = cfg.scenario_name();
    let mut config_text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    config_text.push('\n');
    art.write(CONFIG_FILE, config_text.as_bytes())?;

    let metrics = match &cfg.scenario {
        Scenario::LewisSweep(p) => {
            let cells = run_lewis_sweep(p, &cfg.seeds)?;
            let summary: Vec<Value> = p
                .n_types
                .iter()
                .flat_map(|&t| p.n_signals.iter().map(move |&s| (t, s)))
                .map(|(t, s)| {
                    let group: Vec<&LewisCellResult> =
                        cells.iter().filter(|c| c.n_types == t && c.n_signals == s).collect();
                    let n = group.len() as f64;
                    json!({
                        "n_types": t,
                        "n_signals": s,
                        "pure_optimum": group[0].pure_optimum,
                        "mean_greedy_payoff": group.iter().map(|c| c.greedy_payoff).sum::<f64>() / n,
                        "converged_fraction": group.iter().filter(|c| c.converged).count() as f64 / n,
                        "nash_fraction": group.iter().filter(|c| c.is_nash).count() as f64 / n,
                    })
                })
                .collect();
            json!({ "scenario": name, "config_sha256": hash, "seeds": cfg.seeds, "cells": cells, "summary": summary })
        }
        Scenario::HeteroSync(c) => {
            let runs = cfg
                .seeds
                .par_iter()
                .map(|&s| compare_strategies(c, s))
                .collect::<Result<Vec<_>, _>>()?;
            for run in &runs {
                let base = format!("seed_{}", run.report.seed);
                art.write_metrics(&format!("{base}/sync_report.json"), &run.report)?;
                let mut csv = Vec::new();
                write_curves_csv(&run.curves, &mut csv).map_err(io_err(&dir))?;
                art.write(&format!("{base}/loss_curves.csv"), &csv)?;
                art.write_net(&format!("{base}/models/alice.encoder.smnn"), &run.ab.encoder)?;
                art.write_net(&format!("{base}/models/bob.generator.smnn"), &run.ab.generator)?;
                art.write_net(&format!("{base}/models/carol.encoder.smnn"), &run.cd.encoder)?;
                art.write_net(&format!("{base}/models/david.generator.smnn"), &run.cd.generator)?;
                art.write(&format!("{base}/split.json"), &serde_json::to_vec(run.bars.split()).expect("split serializes"))?;
            }
            let reports: Vec<&SyncReport> = runs.iter().map(|r| &r.report).collect();
            json!({
                "scenario": name,
                "config_sha256": hash,
                "seeds": cfg.seeds,
                "reports": reports,
                "summary": sync_summary(&reports),
            })
        }
        Scenario::MarlExtract(p) => {
            let env = ReferentialEnv::new(p.n_targets)?;
            let results = cfg
                .seeds
                .par_iter()
                .map(|&seed| -> Result<(MarlSeedResult, NamedFiles)> {
                    let mc = MarlConfig { seed, ..p.marl.clone() };
                    let trained = ctde_train(&env, &mc)?;
                    let q = Quantization::levels(mc.levels)?;
                    let exec_q = execute(&trained.actors, &env, p.execution_episodes, &q)?;
                    let exec_r = execute(&trained.actors, &env, p.execution_episodes, &Quantization::RealValued)?;
                    let sr = emergent_sr_report(&exec_q.log)?;
                    let ex = extract_graph(&trained.actors, &env, mc.levels, p.merge_rule, p.weighting)?;
                    let base = format!("seed_{seed}");
                    let mut files = vec![
                        (format!("{base}/actors/speaker.smnn"), trained.actors.speaker.to_bytes()),
                        (format!("{base}/actors/listener.smnn"), trained.actors.listener.to_bytes()),
                        (
                            format!("{base}/actors/{ACTORS_FILE}"),
                            serde_json::to_vec_pretty(&ActorsManifest {
                                n_targets: p.n_targets,
                                message_dim: mc.message_dim,
                                levels: mc.levels,
                            })
                            .expect("manifest serializes"),
                        ),
                        (format!("{base}/reward_curve.csv"), curve_csv(&trained.reward_curve, 100)),
                        (format!("{base}/sr_report.json"), metrics_json(&sr).into_bytes()),
                    ];
                    let mut log = Vec::new();
                    write_log_csv(&exec_q.log, &mut log)?;
                    files.push((format!("{base}/messages.csv"), log));
                    files.extend(ex.files.into_iter().map(|(n, b)| (format!("{base}/{n}"), b)));
                    Ok((
                        MarlSeedResult {
                            seed,
                            final_train_reward: trained.final_reward(),
                            exec_reward_real: exec_r.mean_reward,
                            exec_reward_quantized: exec_q.mean_reward,
                            mutual_information_bits: sr.mutual_information_bits,
                            n_sr_clusters: ex.n_clusters,
                            graph_entropy_bits: ex.graph_entropy,
                            node_entropy_bits: ex.node_entropy,
                            fidelity: ex.fidelity,
                            clauses: ex.clauses,
                        },
                        files,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut per_seed = Vec::new();
            for (r, files) in results {
                for (path, bytes) in files {
                    art.write(&path, &bytes)?;
                }
                per_seed.push(r);
            }
            let rewards: Vec<f64> = per_seed.iter().map(|r| r.final_train_reward).collect();
            json!({
                "scenario": name,
                "config_sha256": hash,
                "seeds": cfg.seeds,
                "results": per_seed,
                "summary": { "median_final_train_reward": median(&rewards) },
            })
        }
    };
    let text = metrics_json(&metrics);
    art.write(METRICS_FILE, text.as_bytes())?;
    let dir = art.finish(name, hash, cfg.seeds.clone())?;
    Ok(RunOutcome { dir, metrics: text })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn sync_summary(reports: &[&SyncReport]) -> Value {
    let per = |s: Strategy, f: fn(&crate::sync::StrategyReport) -> f64| -> f64 {
        median(&reports.iter().filter_map(|r| r.strategy(s)).map(f).collect::<Vec<_>>())
    };
    let strategies: Vec<Value> = [Strategy::NoSync, Strategy::DownloadOnly, Strategy::DownloadPartialUpload]
        .into_iter()
        .map(|s| {
            json!({
                "strategy": s,
                "median_mse": per(s, |r| r.mse),
                "median_probe_accuracy": per(s, |r| r.probe_accuracy),
                "median_upload_bytes": per(s, |r| r.upload_bytes as f64),
                "median_download_bytes": per(s, |r| r.download_bytes as f64),
            })
        })
        .collect();
    let mse = |s| per(s, |r| r.mse);
    json!({
        "strategies": strategies,
        "median_consistency_distance": median(&reports.iter().map(|r| r.consistency_distance).collect::<Vec<_>>()),
        "ordering_holds": mse(Strategy::NoSync) > mse(Strategy::DownloadOnly)
            && mse(Strategy::DownloadOnly) > mse(Strategy::DownloadPartialUpload),
    })
}

/// Loads actors saved by a `marl_extract` run and writes the symbolic graph,
/// ProbLog program, DOT file and entropy summary to `out`.
pub fn extract(actors_dir: &Path, out: &Path, rule: MergeRule, weighting: Weighting) -> Result<PathBuf> {
    let read = |name: &str| -> Result<Vec<u8>> {
        let p = actors_dir.join(name);
        fs::read(&p).map_err(io_err(&p))
    };
    let manifest: ActorsManifest = serde_json::from_slice(&read(ACTORS_FILE)?)
        .map_err(|e| HarnessError::Config(format!("{ACTORS_FILE}: {e}")))?;
    let actors = Actors::new(
        DenseNet::from_bytes(&read("speaker.smnn")?)?,
        DenseNet::from_bytes(&read("listener.smnn")?)?,
    )?;
    let env = ReferentialEnv::new(manifest.n_targets)?;
    let ex = extract_graph(&actors, &env, manifest.levels, rule, weighting)?;
    let mut art = Artifacts::create(out)?;
    for (name, bytes) in &ex.files {
        art.write(name, bytes)?;
    }
    let summary = json!({
        "n_sr_clusters": ex.n_clusters,
        "graph_entropy_bits": ex.graph_entropy,
        "node_entropy_bits": ex.node_entropy,
        "fidelity": ex.fidelity,
        "clauses": ex.clauses,
    });
    art.write(METRICS_FILE, metrics_json(&summary).as_bytes())?;
    let hash = sha256_hex(&serde_json::to_vec(&(&manifest, rule, weighting)).expect("serializes"));
    art.finish("extract", hash, Vec::new())
}

/// Human-readable summary of a run directory; checksums are verified first.
pub fn report(run_dir: &Path) -> Result<String> {
    let mpath = run_dir.join(MANIFEST_FILE);
    let manifest: RunManifest = serde_json::from_slice(&fs::read(&mpath).map_err(io_err(&mpath))?).map_err(|e| {
        HarnessError::RunDir {
            path: mpath.clone(),
            reason: e.to_string(),
        }
    })?;
    for f in &manifest.files {
        let p = run_dir.join(&f.path);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(HarnessError::RunDir {
                path: p,
                reason: "checksum mismatch".into(),
            }
            .into());
        }
    }
    let metrics_path = run_dir.join(METRICS_FILE);
    let metrics: Value = serde_json::from_slice(&fs::read(&metrics_path).map_err(io_err(&metrics_path))?)
        .map_err(|e| HarnessError::RunDir {
            path: metrics_path.clone(),
            reason: e.to_string(),
        })?;
    let mut out = format!(
        "scenario: {}\nconfig sha256: {}\nseeds: {:?}\nfiles: {} (checksums ok)\n",
        manifest.scenario,
        manifest.config_sha256,
        manifest.seeds,
        manifest.files.len()
    );
    let num = |v: &Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.4}"));
    match manifest.scenario.as_str() {
        "lewis_sweep" => {
            out.push_str("\n types signals  optimum  mean payoff  converged  nash\n");
            for c in metrics["summary"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    " {:>5} {:>7}  {:>7}  {:>11}  {:>9}  {:>4}\n",
                    c["n_types"],
                    c["n_signals"],
                    num(&c["pure_optimum"]),
                    num(&c["mean_greedy_payoff"]),
                    num(&c["converged_fraction"]),
                    num(&c["nash_fraction"])
                ));
            }
        }
        "hetero_sync" => {
            out.push_str("\n strategy                   median mse  median probe  median upload B\n");
            for s in metrics["summary"]["strategies"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    " {:<25} {:>11}  {:>12}  {:>15}\n",
                    s["strategy"].as_str().unwrap_or("?"),
                    num(&s["median_mse"]),
                    num(&s["median_probe_accuracy"]),
                    s["median_upload_bytes"]
                ));
            }
            out.push_str(&format!(
                "\n ordering no-sync > download-only > partial upload: {}\n median consistency distance: {}\n",
                metrics["summary"]["ordering_holds"],
                num(&metrics["summary"]["median_consistency_distance"])
            ));
        }
        "marl_extract" => {
            out.push_str("\n seed  train reward  exec (real)  exec (quantized)  MI bits  clusters  entropy  fidelity\n");
            for r in metrics["results"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    " {:>4}  {:>12}  {:>11}  {:>16}  {:>7}  {:>8}  {:>7}  {:>8}\n",
                    r["seed"],
                    num(&r["final_train_reward"]),
                    num(&r["exec_reward_real"]),
                    num(&r["exec_reward_quantized"]),
                    num(&r["mutual_information_bits"]),
                    r["n_sr_clusters"],
                    num(&r["graph_entropy_bits"]),
                    num(&r["fidelity"])
                ));
            }
        }
        _ => out.push_str(&format!("\n{}\n", serde_json::to_string_pretty(&metrics).expect("value serializes"))),
    }
    Ok(out)
}

pub fn error_json(err: &Error) -> String {
    let mut s = serde_json::to_string_pretty(&json!({ "module": err.module(), "message": err.to_string() }))
        .expect("value serializes");
    s.push('\n');
    s
}
