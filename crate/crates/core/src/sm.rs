//! Agent-level semantic multiverses.
//!
//! A [`SemanticMultiverse`] couples an encoder (observation → representation),
//! a generator (representation → rendered output) and a [`KnowledgeStore`]
//! holding serialized networks of itself and other agents, pairwise channel
//! models, and symbolic graphs. With a foreign generator and the channel to
//! that agent stored locally, an agent can emulate the link end to end.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{ChannelError, VectorChannel, VectorChannelSpec};
use crate::nn::{DenseNet, NnError};
use crate::symbolic::SymbolicGraph;

#[derive(Debug, Error)]
pub enum SmError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("knowledge miss: no {0} in knowledge base")]
    KnowledgeMiss(String),
    #[error("incompatible semantic multiverse: {0}")]
    Incompatible(String),
    #[error("probe set is empty")]
    EmptyProbes,
    #[error("invalid agent id {0:?}")]
    InvalidAgentId(String),
    #[error("knowledge base manifest: {0}")]
    Manifest(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    /// Ids double as file-name stems, so they are restricted to `[A-Za-z0-9_-]+`.
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(SmError::InvalidAgentId(id));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = SmError;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkRole {
    Encoder,
    Generator,
}

impl fmt::Display for SkRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkRole::Encoder => "encoder",
            SkRole::Generator => "generator",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Visual,
    Audio,
    Haptic,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRepresentation {
    pub values: Vec<f64>,
    pub modality: Modality,
}

/// Serialized network knowledge, pairwise channels and symbolic graphs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeStore {
    networks: BTreeMap<(AgentId, SkRole), Vec<u8>>,
    channels: BTreeMap<(AgentId, AgentId), VectorChannel>,
    graphs: BTreeMap<AgentId, SymbolicGraph>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the serialized form of `net`; returns the byte count stored.
    pub fn insert_network(&mut self, agent: AgentId, role: SkRole, net: &DenseNet) -> usize {
        let bytes = net.to_bytes();
        let len = bytes.len();
        self.networks.insert((agent, role), bytes);
        len
    }

    pub fn network(&self, agent: &AgentId, role: SkRole) -> Result<DenseNet> {
        let bytes = self
            .networks
            .get(&(agent.clone(), role))
            .ok_or_else(|| SmError::KnowledgeMiss(format!("{role} of agent {agent}")))?;
        Ok(DenseNet::from_bytes(bytes)?)
    }

    pub fn has_network(&self, agent: &AgentId, role: SkRole) -> bool {
        self.networks.contains_key(&(agent.clone(), role))
    }

    pub fn insert_channel(&mut self, from: AgentId, to: AgentId, channel: VectorChannel) {
        self.channels.insert((from, to), channel);
    }

    pub fn channel(&self, from: &AgentId, to: &AgentId) -> Result<&VectorChannel> {
        self.channels
            .get(&(from.clone(), to.clone()))
            .ok_or_else(|| SmError::KnowledgeMiss(format!("channel {from}->{to}")))
    }

    pub fn insert_graph(&mut self, agent: AgentId, graph: SymbolicGraph) {
        self.graphs.insert(agent, graph);
    }

    pub fn graph(&self, agent: &AgentId) -> Result<&SymbolicGraph> {
        self.graphs
            .get(agent)
            .ok_or_else(|| SmError::KnowledgeMiss(format!("symbolic graph of agent {agent}")))
    }

    /// Writes one file per stored object plus `manifest.json` with SHA-256 checksums.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = KbManifest::default();
        for ((agent, role), bytes) in &self.networks {
            let file = format!("{agent}.{role}.smnn");
            fs::write(dir.join(&file), bytes)?;
            manifest.networks.push(NetworkEntry {
                agent: agent.clone(),
                role: *role,
                file,
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            });
        }
        for ((from, to), ch) in &self.channels {
            manifest.channels.push(ChannelEntry {
                from: from.clone(),
                to: to.clone(),
                spec: ch.into(),
            });
        }
        for (agent, graph) in &self.graphs {
            let file = format!("{agent}.graph.json");
            let bytes = serde_json::to_vec_pretty(graph).map_err(|e| SmError::Manifest(e.to_string()))?;
            fs::write(dir.join(&file), &bytes)?;
            manifest.graphs.push(GraphEntry {
                agent: agent.clone(),
                file,
                sha256: sha256_hex(&bytes),
            });
        }
        let mut agents: Vec<AgentId> = manifest
            .networks
            .iter()
            .map(|n| n.agent.clone())
            .chain(manifest.channels.iter().flat_map(|c| [c.from.clone(), c.to.clone()]))
            .chain(manifest.graphs.iter().map(|g| g.agent.clone()))
            .collect();
        agents.sort();
        agents.dedup();
        manifest.agents = agents;
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| SmError::Manifest(e.to_string()))?;
        fs::write(dir.join(KB_MANIFEST), json)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let raw = fs::read(dir.join(KB_MANIFEST))?;
        let manifest: KbManifest = serde_json::from_slice(&raw).map_err(|e| SmError::Manifest(e.to_string()))?;
        let mut kb = Self::new();
        for n in manifest.networks {
            let bytes = fs::read(dir.join(&n.file))?;
            if sha256_hex(&bytes) != n.sha256 {
                return Err(SmError::Checksum(n.file));
            }
            DenseNet::from_bytes(&bytes)?;
            kb.networks.insert((n.agent, n.role), bytes);
        }
        for c in manifest.channels {
            kb.channels.insert((c.from, c.to), c.spec.build()?);
        }
        for g in manifest.graphs {
            let bytes = fs::read(dir.join(&g.file))?;
            if sha256_hex(&bytes) != g.sha256 {
                return Err(SmError::Checksum(g.file));
            }
            let graph = serde_json::from_slice(&bytes).map_err(|e| SmError::Manifest(e.to_string()))?;
            kb.graphs.insert(g.agent, graph);
        }
        Ok(kb)
    }
}

pub const KB_MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KbManifest {
    agents: Vec<AgentId>,
    networks: Vec<NetworkEntry>,
    channels: Vec<ChannelEntry>,
    graphs: Vec<GraphEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkEntry {
    agent: AgentId,
    role: SkRole,
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelEntry {
    from: AgentId,
    to: AgentId,
    spec: VectorChannelSpec,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphEntry {
    agent: AgentId,
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMultiverse {
    agent: AgentId,
    encoder: DenseNet,
    generator: DenseNet,
    modality: Modality,
    pub kb: KnowledgeStore,
}

impl SemanticMultiverse {
    pub fn new(agent: AgentId, encoder: DenseNet, generator: DenseNet) -> Result<Self> {
        if encoder.output_dim() != generator.input_dim() {
            return Err(SmError::Incompatible(format!(
                "encoder emits {} values, generator expects {}",
                encoder.output_dim(),
                generator.input_dim()
            )));
        }
        Ok(Self {
            agent,
            encoder,
            generator,
            modality: Modality::default(),
            kb: KnowledgeStore::new(),
        })
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn agent(&self) -> &AgentId {
        &self.agent
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn generator(&self) -> &DenseNet {
        &self.generator
    }

    /// Swaps in a retrained encoder with the same input and SR sizes.
    pub fn replace_encoder(&mut self, encoder: DenseNet) -> Result<()> {
        if encoder.input_dim() != self.encoder.input_dim() || encoder.output_dim() != self.sr_dim() {
            return Err(SmError::Incompatible("replacement encoder changes input or SR size".into()));
        }
        self.encoder = encoder;
        Ok(())
    }

    pub fn sr_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Stores this agent's own encoder and generator in its knowledge base.
    pub fn store_own_knowledge(&mut self) {
        let id = self.agent.clone();
        self.kb.insert_network(id.clone(), SkRole::Encoder, &self.encoder);
        self.kb.insert_network(id, SkRole::Generator, &self.generator);
    }

    pub fn encode(&self, observation: &[f64]) -> Result<SemanticRepresentation> {
        Ok(SemanticRepresentation {
            values: self.encoder.predict(observation)?,
            modality: self.modality,
        })
    }

    pub fn generate(&self, sr: &SemanticRepresentation) -> Result<Vec<f64>> {
        Ok(self.generator.predict(&sr.values)?)
    }

    /// Encode then generate with no channel in between.
    pub fn round_trip(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.generate(&self.encode(observation)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulationMetrics {
    pub per_probe_mse: Vec<f64>,
    pub mean_mse: f64,
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Emulates the link to `foreign` inside `local`'s knowledge base: encode
/// locally, pass through the stored channel, decode with the stored foreign
/// generator. Returns per-probe reconstruction error against the probe.
pub fn emulate_smc<R: Rng + ?Sized>(
    local: &SemanticMultiverse,
    foreign: &AgentId,
    probes: &[&[f64]],
    rng: &mut R,
) -> Result<EmulationMetrics> {
    let generator = local.kb.network(foreign, SkRole::Generator)?;
    let channel = local.kb.channel(local.agent(), foreign)?;
    if generator.input_dim() != local.sr_dim() {
        return Err(SmError::Incompatible(format!(
            "stored generator of {foreign} expects {} values, encoder emits {}",
            generator.input_dim(),
            local.sr_dim()
        )));
    }
    let mut per_probe_mse = Vec::with_capacity(probes.len());
    for probe in probes {
        let sr = local.encode(probe)?;
        let received = channel.transmit_vector(&sr.values, rng)?;
        let out = generator.predict(&received)?;
        per_probe_mse.push(mse(&out, probe));
    }
    let mean_mse = per_probe_mse.iter().sum::<f64>() / per_probe_mse.len().max(1) as f64;
    Ok(EmulationMetrics { per_probe_mse, mean_mse })
}

/// Fraction of probes on which the two full pipelines differ by more than
/// `tolerance` in sup-norm. Zero means consistent on this probe set.
pub fn sm_consistency(a: &SemanticMultiverse, b: &SemanticMultiverse, probes: &[&[f64]], tolerance: f64) -> Result<f64> {
    if probes.is_empty() {
        return Err(SmError::EmptyProbes);
    }
    let mut differing = 0usize;
    for probe in probes {
        let oa = a.round_trip(probe)?;
        let ob = b.round_trip(probe)?;
        if oa.len() != ob.len() {
            return Err(SmError::Incompatible("generators render different output sizes".into()));
        }
        let sup = oa.iter().zip(&ob).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if sup > tolerance {
            differing += 1;
        }
    }
    Ok(differing as f64 / probes.len() as f64)
}
