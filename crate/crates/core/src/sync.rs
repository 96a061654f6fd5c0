//! Heterogeneous codec pairs and background synchronization.
//!
//! Two encoder/generator pairs train in different data-channel environments.
//! Crossing them (pair A's encoder into pair D's generator) fails, and three
//! remedies are compared with a byte ledger: federated averaging, split
//! learning, and the hybrid protocol where the receiver's generator is
//! downloaded, the sender re-trains locally against an emulated channel with
//! all but the last `⌈f·L⌉` generator layers frozen, and only those layers are
//! uploaded back.
//!
//! Gradients pass the channel straight-through: noise in the forward pass,
//! identity in the backward pass. Mini-batches are `⌊n / batch_size⌋` full
//! batches per epoch; the remainder of a shuffled epoch is dropped.

use std::io;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, VectorChannel, VectorChannelSpec};
use crate::data::{make_synthetic, Corpus, DataError, Dataset, LinearProbe, ProbeConfig};
use crate::nn::{Activation, DenseNet, Gradients, Layer, LossKind, NnError};
use crate::rng::{RngSeed, SimRng};
use crate::sm::{mse, sm_consistency, AgentId, SemanticMultiverse, SkRole, SmError};

#[derive(Debug, Error)]
pub enum SyncError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sm(#[from] SmError),
    #[error("training diverged in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unfreeze fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("incompatible architecture: {0}")]
    IncompatibleArchitecture(String),
}

pub type Result<T, E = SyncError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSpec {
    pub sr_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self {
            sr_dim: 16,
            encoder_hidden: vec![32],
            generator_hidden: vec![80, 32],
        }
    }
}

impl CodecSpec {
    /// Tanh hidden layers and SR; sigmoid rendered output.
    pub fn build<R: Rng + ?Sized>(&self, input_dim: usize, rng: &mut R) -> Result<Codec> {
        if self.sr_dim == 0 {
            return Err(SyncError::Config("sr_dim must be positive".into()));
        }
        let mut enc: Vec<(usize, Activation)> = self.encoder_hidden.iter().map(|&h| (h, Activation::Tanh)).collect();
        enc.push((self.sr_dim, Activation::Tanh));
        let mut gen: Vec<(usize, Activation)> = self.generator_hidden.iter().map(|&h| (h, Activation::Tanh)).collect();
        gen.push((input_dim, Activation::Sigmoid));
        Ok(Codec {
            encoder: DenseNet::random(input_dim, &enc, rng)?,
            generator: DenseNet::random(self.sr_dim, &gen, rng)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub encoder: DenseNet,
    pub generator: DenseNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lr: 2.0,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvironmentPair {
    pub dataset_id: String,
    pub dataset: Dataset,
    pub channel: VectorChannel,
    pub codec: CodecSpec,
    pub train: TrainParams,
}

impl EnvironmentPair {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(SyncError::Config(format!("dataset {} is empty", self.dataset_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    FedAvg,
    SplitActivation,
    SplitGradient,
    GeneratorDownload,
    FragmentUpload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upload,
    Download,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub phase: Phase,
    pub direction: Direction,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, phase: Phase, direction: Direction, bytes: u64) {
        self.entries.push(LedgerEntry { phase, direction, bytes });
    }

    pub fn extend(&mut self, other: &CommLedger) {
        self.entries.extend_from_slice(&other.entries);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn total_in(&self, direction: Direction) -> u64 {
        self.entries.iter().filter(|e| e.direction == direction).map(|e| e.bytes).sum()
    }
}

/// Mean reconstruction mse of `samples` through encoder, channel and generator.
pub fn pipeline_mse<R: Rng + ?Sized>(codec: &Codec, channel: &VectorChannel, samples: &[&[f64]], rng: &mut R) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for x in samples {
        total += mse(&reconstruct(codec, channel, x, rng)?, x);
    }
    Ok(total / samples.len() as f64)
}

fn reconstruct<R: Rng + ?Sized>(codec: &Codec, channel: &VectorChannel, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let sr = codec.encoder.predict(x)?;
    let received = channel.transmit_vector(&sr, rng)?;
    Ok(codec.generator.predict(&received)?)
}

fn check_chain(codec: &Codec, data_dim: usize) -> Result<()> {
    let (e, g) = (&codec.encoder, &codec.generator);
    if e.input_dim() != data_dim || e.output_dim() != g.input_dim() || g.output_dim() != data_dim {
        return Err(SyncError::IncompatibleArchitecture(format!(
            "data {data_dim} -> encoder {}x{} -> generator {}x{}",
            e.input_dim(),
            e.output_dim(),
            g.input_dim(),
            g.output_dim()
        )));
    }
    Ok(())
}

/// End-to-end SGD through `channel`. Frozen parameter tensors are left alone.
/// Returns the training-set pipeline mse before training and after each epoch;
/// `on_batch` sees the size of every processed batch.
#[allow(clippy::too_many_arguments)]
fn train_codec(
    codec: &mut Codec,
    samples: &[&[f64]],
    channel: &VectorChannel,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut SimRng,
    eval_rng: &mut SimRng,
    mut on_batch: impl FnMut(usize),
) -> Result<Vec<f64>> {
    if let Some(x) = samples.first() {
        check_chain(codec, x.len())?;
    }
    if epochs > 0 && (batch_size == 0 || samples.len() < batch_size) {
        return Err(SyncError::Config(format!(
            "batch size {batch_size} needs 1..={} training samples",
            samples.len()
        )));
    }
    let mut curve = vec![pipeline_mse(codec, channel, samples, eval_rng)?];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..epochs {
        let diverged = |e: NnError| match e {
            NnError::Divergence { .. } => SyncError::Divergence { epoch },
            e => e.into(),
        };
        order.shuffle(rng);
        for batch in order.chunks_exact(batch_size) {
            let mut ge = Gradients::zeros_like(&codec.encoder);
            let mut gg = Gradients::zeros_like(&codec.generator);
            for &i in batch {
                let x = samples[i];
                let te = codec.encoder.forward(x)?;
                let received = channel.transmit_vector(te.output(), rng)?;
                let tg = codec.generator.forward(&received)?;
                let (_, dy) = codec.generator.loss(tg.output(), LossKind::Mse, x)?;
                let bg = codec.generator.backward_from_output(&tg, &dy)?;
                // Straight-through: d(received)/d(sr) taken as identity.
                let be = codec.encoder.backward_from_output(&te, &bg.input_grad)?;
                gg.accumulate(&bg.grads);
                ge.accumulate(&be.grads);
            }
            let scale = 1.0 / batch.len() as f64;
            ge.scale(scale);
            gg.scale(scale);
            codec.encoder.apply_sgd(&ge, lr).map_err(diverged)?;
            codec.generator.apply_sgd(&gg, lr).map_err(diverged)?;
            on_batch(batch.len());
        }
        let loss = pipeline_mse(codec, channel, samples, eval_rng)?;
        if !loss.is_finite() {
            return Err(SyncError::Divergence { epoch });
        }
        curve.push(loss);
    }
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub codec: Codec,
    /// Training-split mse before training, then after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains a fresh codec pair on the training split of `env.dataset`.
pub fn train_pair(env: &EnvironmentPair) -> Result<TrainedPair> {
    env.validate()?;
    let seed = RngSeed(env.train.seed);
    let mut rng = seed.stream(0);
    let mut eval_rng = seed.stream(1);
    let mut codec = env.codec.build(env.dataset.dim(), &mut rng)?;
    let samples = env.dataset.train_samples();
    let loss_curve = train_codec(
        &mut codec,
        &samples,
        &env.channel,
        env.train.lr,
        env.train.epochs,
        env.train.batch_size,
        &mut rng,
        &mut eval_rng,
        |_| {},
    )?;
    Ok(TrainedPair { codec, loss_curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEval {
    pub mse: f64,
    pub probe_accuracy: f64,
}

/// Linear probe on the clean training images of `dataset`. Reconstructions
/// are scored by how well this fixed classifier still recognizes them.
pub fn fit_probe(dataset: &Dataset) -> Result<LinearProbe> {
    Ok(LinearProbe::train(
        &dataset.train_samples(),
        &dataset.train_labels(),
        dataset.n_classes(),
        ProbeConfig::default(),
    )?)
}

pub fn cross_eval<R: Rng + ?Sized>(
    encoder: &DenseNet,
    generator: &DenseNet,
    channel: &VectorChannel,
    samples: &[&[f64]],
    labels: &[usize],
    probe: &LinearProbe,
    rng: &mut R,
) -> Result<CrossEval> {
    let codec = Codec {
        encoder: encoder.clone(),
        generator: generator.clone(),
    };
    if let Some(x) = samples.first() {
        check_chain(&codec, x.len())?;
    }
    let mut total = 0.0;
    let mut hits = 0usize;
    for (x, &label) in samples.iter().zip(labels) {
        let out = reconstruct(&codec, channel, x, rng)?;
        total += mse(&out, x);
        if probe.predict(&out)? == label {
            hits += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(CrossEval {
        mse: total / n,
        probe_accuracy: hits as f64 / n,
    })
}

fn same_architecture(a: &DenseNet, b: &DenseNet) -> bool {
    a.input_dim() == b.input_dim()
        && a.layers().len() == b.layers().len()
        && a
            .layers()
            .iter()
            .zip(b.layers())
            .all(|(x, y)| x.out_dim() == y.out_dim() && x.activation() == y.activation())
}

fn average(a: &DenseNet, b: &DenseNet) -> Result<DenseNet> {
    if !same_architecture(a, b) {
        return Err(SyncError::IncompatibleArchitecture(format!(
            "layer sizes {:?} vs {:?}",
            a.layer_sizes(),
            b.layer_sizes()
        )));
    }
    let mean = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(x, y)| (x + y) / 2.0).collect() };
    let layers = a
        .layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| {
            Layer::new(
                x.in_dim(),
                x.out_dim(),
                x.activation(),
                mean(x.weights(), y.weights()),
                mean(x.bias(), y.bias()),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DenseNet::from_layers(layers)?)
}

#[derive(Debug, Clone)]
pub struct FedAvgOutcome {
    /// Both pairs continue from this codec.
    pub averaged: Codec,
    pub ledger: CommLedger,
}

/// One federated round: each pair uploads its encoder and generator, the
/// server averages elementwise, and each pair downloads both averages.
pub fn fedavg_round(ab: &Codec, cd: &Codec) -> Result<FedAvgOutcome> {
    let averaged = Codec {
        encoder: average(&ab.encoder, &cd.encoder)?,
        generator: average(&ab.generator, &cd.generator)?,
    };
    let mut ledger = CommLedger::new();
    for pair in [ab, cd] {
        ledger.record(Phase::FedAvg, Direction::Upload, pair.encoder.serialized_len() as u64);
        ledger.record(Phase::FedAvg, Direction::Upload, pair.generator.serialized_len() as u64);
    }
    for _ in 0..2 {
        ledger.record(Phase::FedAvg, Direction::Download, averaged.encoder.serialized_len() as u64);
        ledger.record(Phase::FedAvg, Direction::Download, averaged.generator.serialized_len() as u64);
    }
    Ok(FedAvgOutcome { averaged, ledger })
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub codec: Codec,
    pub ledger: CommLedger,
    pub loss_curve: Vec<f64>,
}

/// Split learning across the link: every batch moves its SR activations one
/// way and their gradients back, `batch · sr_dim · 8` bytes each.
pub fn split_session(
    codec: &Codec,
    dataset: &Dataset,
    channel: &VectorChannel,
    params: &TrainParams,
    epochs: usize,
) -> Result<SessionOutcome> {
    let seed = RngSeed(params.seed);
    let (mut rng, mut eval_rng) = (seed.stream(2), seed.stream(3));
    let mut codec = codec.clone();
    codec.encoder.unfreeze_all();
    codec.generator.unfreeze_all();
    let sr_dim = codec.encoder.output_dim() as u64;
    let mut ledger = CommLedger::new();
    let samples = dataset.train_samples();
    let loss_curve = train_codec(
        &mut codec,
        &samples,
        channel,
        params.lr,
        epochs,
        params.batch_size,
        &mut rng,
        &mut eval_rng,
        |b| {
            let bytes = b as u64 * sr_dim * 8;
            ledger.record(Phase::SplitActivation, Direction::Download, bytes);
            ledger.record(Phase::SplitGradient, Direction::Upload, bytes);
        },
    )?;
    Ok(SessionOutcome {
        codec,
        ledger,
        loss_curve,
    })
}

/// `⌈f·L⌉` trailing layers, `f` in `[0, 1]`.
pub fn unfrozen_layer_count(f: f64, layers: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&f) {
        return Err(SyncError::InvalidFraction(f));
    }
    // Guard against f·L landing a hair above an integer, e.g. (1/3)·3.
    let raw = f * layers as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    Ok(k as usize)
}

#[derive(Debug, Clone)]
pub struct HybridOutcome {
    /// The re-trained trailing generator layers; `None` when nothing was unfrozen.
    pub fragment: Option<DenseNet>,
    pub unfrozen_layers: usize,
    pub ledger: CommLedger,
    pub loss_curve: Vec<f64>,
}

/// The hybrid protocol from the sender's side. `alice`'s encoder is replaced by
/// the re-trained one and the downloaded generator is stored in her
/// knowledge base. The channel comes from her knowledge base.
pub fn hybrid_sync(
    alice: &mut SemanticMultiverse,
    david: &AgentId,
    generator_d: &DenseNet,
    dataset: &Dataset,
    params: &TrainParams,
    epochs: usize,
    unfreeze_fraction: f64,
) -> Result<HybridOutcome> {
    let k = unfrozen_layer_count(unfreeze_fraction, generator_d.layers().len())?;
    let channel = alice.kb.channel(alice.agent(), david)?.clone();
    if generator_d.input_dim() != alice.sr_dim() {
        return Err(SyncError::IncompatibleArchitecture(format!(
            "generator expects {} values, encoder emits {}",
            generator_d.input_dim(),
            alice.sr_dim()
        )));
    }

    let mut ledger = CommLedger::new();
    let downloaded = alice.kb.insert_network(david.clone(), SkRole::Generator, generator_d);
    ledger.record(Phase::GeneratorDownload, Direction::Download, downloaded as u64);

    let mut codec = Codec {
        encoder: alice.encoder().clone(),
        generator: generator_d.clone(),
    };
    codec.encoder.unfreeze_all();
    codec.generator.freeze_all_but_last(k);
    let seed = RngSeed(params.seed);
    let (mut rng, mut eval_rng) = (seed.stream(4), seed.stream(5));
    let samples = dataset.train_samples();
    let loss_curve = train_codec(
        &mut codec,
        &samples,
        &channel,
        params.lr,
        epochs,
        params.batch_size,
        &mut rng,
        &mut eval_rng,
        |_| {},
    )?;

    let fragment = if k == 0 {
        None
    } else {
        let layers = codec.generator.layers();
        let mut tail: Vec<Layer> = layers[layers.len() - k..].to_vec();
        tail.iter_mut().for_each(|l| l.set_frozen(false, false));
        let frag = DenseNet::from_layers(tail)?;
        ledger.record(Phase::FragmentUpload, Direction::Upload, frag.serialized_len() as u64);
        Some(frag)
    };
    codec.generator.unfreeze_all();
    alice.kb.insert_network(david.clone(), SkRole::Generator, &codec.generator);
    alice.replace_encoder(codec.encoder)?;
    Ok(HybridOutcome {
        fragment,
        unfrozen_layers: k,
        ledger,
        loss_curve,
    })
}

/// Receiver side: replaces the trailing layers of `generator` with `fragment`.
pub fn apply_fragment(generator: &DenseNet, fragment: &DenseNet) -> Result<DenseNet> {
    let n = generator.layers().len();
    let k = fragment.layers().len();
    if k > n {
        return Err(SyncError::IncompatibleArchitecture(format!("fragment has {k} layers, generator {n}")));
    }
    let head = &generator.layers()[..n - k];
    for (old, new) in generator.layers()[n - k..].iter().zip(fragment.layers()) {
        if old.in_dim() != new.in_dim() || old.out_dim() != new.out_dim() || old.activation() != new.activation() {
            return Err(SyncError::IncompatibleArchitecture("fragment layer shapes differ".into()));
        }
    }
    let mut layers = head.to_vec();
    layers.extend_from_slice(fragment.layers());
    Ok(DenseNet::from_layers(layers)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    pub n_per_class: usize,
    pub heldout_fraction: f64,
    pub codec: CodecSpec,
    pub train: TrainParams,
    pub sync_epochs: usize,
    /// Fraction for the partial-upload strategy.
    pub unfreeze_fraction: f64,
    /// Channel of the bars pair.
    pub ab_channel: VectorChannelSpec,
    /// Channel of the blobs pair, also the cross link into its generator.
    pub cd_channel: VectorChannelSpec,
    pub consistency_tolerance: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            heldout_fraction: 0.2,
            codec: CodecSpec::default(),
            train: TrainParams::default(),
            sync_epochs: 30,
            unfreeze_fraction: 1.0 / 3.0,
            ab_channel: VectorChannelSpec::Clean {},
            cd_channel: VectorChannelSpec::QuantizeThenDmc {
                levels: 16,
                error_p: 0.05,
            },
            consistency_tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NoSync,
    DownloadOnly,
    DownloadPartialUpload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub unfreeze_fraction: Option<f64>,
    pub unfrozen_layers: usize,
    pub mse: f64,
    pub probe_accuracy: f64,
    pub download_bytes: u64,
    pub upload_bytes: u64,
    pub total_bytes: u64,
}

/// One seed of the heterogeneity experiment. All metrics use held-out samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub seed: u64,
    pub within_pair_mse_ab: f64,
    pub within_pair_mse_cd: f64,
    pub within_pair_probe_accuracy_ab: f64,
    pub consistency_distance: f64,
    pub generator_bytes: u64,
    pub generator_param_bytes: u64,
    pub strategies: Vec<StrategyReport>,
}

impl SyncReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|r| r.strategy == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyncRun {
    pub report: SyncReport,
    pub curves: Vec<LossCurve>,
    pub bars: Dataset,
    pub blobs: Dataset,
    pub ab: Codec,
    pub cd: Codec,
}

pub const ALICE: &str = "alice";
pub const DAVID: &str = "david";

/// Builds both environments for `seed`: bars for the first pair, blobs for the second.
pub fn heterogeneity_fixture(cfg: &SyncConfig, seed: u64) -> Result<(EnvironmentPair, EnvironmentPair)> {
    let bars = make_synthetic(Corpus::Bars, cfg.n_per_class, seed)?.stratified_split(cfg.heldout_fraction, seed)?;
    let blobs_seed = seed ^ 0xb10b;
    let blobs =
        make_synthetic(Corpus::Blobs, cfg.n_per_class, blobs_seed)?.stratified_split(cfg.heldout_fraction, blobs_seed)?;
    let train = |s: u64| TrainParams { seed: s, ..cfg.train };
    Ok((
        EnvironmentPair {
            dataset_id: "bars".into(),
            dataset: bars,
            channel: cfg.ab_channel.build()?,
            codec: cfg.codec.clone(),
            train: train(seed),
        },
        EnvironmentPair {
            dataset_id: "blobs".into(),
            dataset: blobs,
            channel: cfg.cd_channel.build()?,
            codec: cfg.codec.clone(),
            train: train(seed ^ 0xcd),
        },
    ))
}

/// Trains both pairs and compares no sync, download-only and
/// download-plus-partial-upload on the bars pair's held-out split.
pub fn compare_strategies(cfg: &SyncConfig, seed: u64) -> Result<SyncRun> {
    let (env_ab, env_cd) = heterogeneity_fixture(cfg, seed)?;
    let ab = train_pair(&env_ab)?;
    let cd = train_pair(&env_cd)?;
    let bars = &env_ab.dataset;
    let heldout = bars.heldout_samples();
    let heldout_labels = bars.heldout_labels();
    let probe = fit_probe(bars)?;
    let eval_seed = RngSeed(seed).stream(7);

    let within_ab = cross_eval(
        &ab.codec.encoder,
        &ab.codec.generator,
        &env_ab.channel,
        &heldout,
        &heldout_labels,
        &probe,
        &mut eval_seed.clone(),
    )?;
    let within_cd = pipeline_mse(
        &cd.codec,
        &env_cd.channel,
        &env_cd.dataset.heldout_samples(),
        &mut eval_seed.clone(),
    )?;

    let alice_id = AgentId::new(ALICE)?;
    let david_id = AgentId::new(DAVID)?;
    let mut alice = SemanticMultiverse::new(alice_id.clone(), ab.codec.encoder.clone(), ab.codec.generator.clone())?;
    alice.store_own_knowledge();
    alice.kb.insert_channel(alice_id.clone(), david_id.clone(), env_cd.channel.clone());
    let carol_david = SemanticMultiverse::new(david_id.clone(), cd.codec.encoder.clone(), cd.codec.generator.clone())?;
    let consistency_distance = sm_consistency(&alice, &carol_david, &heldout, cfg.consistency_tolerance)?;

    let generator_d = &cd.codec.generator;
    let eval = |enc: &DenseNet, gen: &DenseNet| {
        cross_eval(enc, gen, &env_cd.channel, &heldout, &heldout_labels, &probe, &mut eval_seed.clone())
    };
    let mut strategies = Vec::new();
    let mut curves = vec![
        LossCurve {
            name: "pair_ab".into(),
            values: ab.loss_curve.clone(),
        },
        LossCurve {
            name: "pair_cd".into(),
            values: cd.loss_curve.clone(),
        },
    ];

    let none = eval(&ab.codec.encoder, generator_d)?;
    strategies.push(StrategyReport {
        strategy: Strategy::NoSync,
        unfreeze_fraction: None,
        unfrozen_layers: 0,
        mse: none.mse,
        probe_accuracy: none.probe_accuracy,
        download_bytes: 0,
        upload_bytes: 0,
        total_bytes: 0,
    });

    let sync_params = TrainParams {
        seed: seed ^ 0x5c,
        ..cfg.train
    };
    for (strategy, f) in [
        (Strategy::DownloadOnly, 0.0),
        (Strategy::DownloadPartialUpload, cfg.unfreeze_fraction),
    ] {
        let mut sender = alice.clone();
        let out = hybrid_sync(&mut sender, &david_id, generator_d, bars, &sync_params, cfg.sync_epochs, f)?;
        let receiver_gen = match &out.fragment {
            Some(frag) => apply_fragment(generator_d, frag)?,
            None => generator_d.clone(),
        };
        let r = eval(sender.encoder(), &receiver_gen)?;
        strategies.push(StrategyReport {
            strategy,
            unfreeze_fraction: Some(f),
            unfrozen_layers: out.unfrozen_layers,
            mse: r.mse,
            probe_accuracy: r.probe_accuracy,
            download_bytes: out.ledger.total_in(Direction::Download),
            upload_bytes: out.ledger.total_in(Direction::Upload),
            total_bytes: out.ledger.total(),
        });
        curves.push(LossCurve {
            name: format!("{strategy:?}").to_lowercase(),
            values: out.loss_curve,
        });
    }

    let report = SyncReport {
        seed,
        within_pair_mse_ab: within_ab.mse,
        within_pair_mse_cd: within_cd,
        within_pair_probe_accuracy_ab: within_ab.probe_accuracy,
        consistency_distance,
        generator_bytes: generator_d.serialized_len() as u64,
        generator_param_bytes: 8 * generator_d.param_count() as u64,
        strategies,
    };
    Ok(SyncRun {
        report,
        curves,
        bars: env_ab.dataset,
        blobs: env_cd.dataset,
        ab: ab.codec,
        cd: cd.codec,
    })
}

/// Long-format CSV: `curve,epoch,mse`.
pub fn write_curves_csv<W: io::Write>(curves: &[LossCurve], writer: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["curve", "epoch", "mse"])?;
    for c in curves {
        for (epoch, v) in c.values.iter().enumerate() {
            w.write_record([c.name.clone(), epoch.to_string(), format!("{v:?}")])?;
        }
    }
    w.flush()
}
