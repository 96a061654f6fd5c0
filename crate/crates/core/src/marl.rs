//! Emergent communication on a one-step referential game.
//!
//! A speaker sees a one-hot target and emits a real message in `[-1, 1]^m`
//! (tanh head); a listener sees only the message and picks a target. Training
//! is centralized: a critic `V(target)` provides the baseline for the
//! listener's score-function gradient, and the same surrogate loss is
//! backpropagated through the noisy message into the speaker. Execution is
//! decentralized: actors only, greedy actions, optional message quantization.

use std::collections::BTreeMap;
use std::io;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{sample_index, ChannelError, UniformQuantizer};
use crate::lewis::argmax;
use crate::nn::{Activation, DenseNet, LossKind, NnError};
use crate::rng::seeded;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("training diverged at episode {episode}")]
    Divergence { episode: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("state {state} out of range for {n_targets} targets")]
    StateOutOfRange { state: usize, n_targets: usize },
    #[error("message log is empty")]
    EmptyLog,
    #[error("message log: {0}")]
    Log(String),
}

pub type Result<T, E = MarlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferentialEnv {
    n_targets: usize,
}

impl ReferentialEnv {
    pub fn new(n_targets: usize) -> Result<Self> {
        if n_targets == 0 {
            return Err(MarlError::Config("n_targets must be at least 1".into()));
        }
        Ok(Self { n_targets })
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    /// States are target indices.
    pub fn state_count(&self) -> usize {
        self.n_targets
    }

    pub fn observation(&self, target: usize) -> Result<Vec<f64>> {
        self.check_state(target)?;
        let mut v = vec![0.0; self.n_targets];
        v[target] = 1.0;
        Ok(v)
    }

    pub fn reward(&self, target: usize, action: usize) -> f64 {
        if target == action {
            1.0
        } else {
            0.0
        }
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.n_targets {
            return Err(MarlError::StateOutOfRange {
                state,
                n_targets: self.n_targets,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarlConfig {
    pub episodes: usize,
    pub lr: f64,
    pub critic_lr: f64,
    pub message_dim: usize,
    pub hidden: usize,
    /// Std of the additive message noise during training only.
    pub sigma: f64,
    /// Quantizer levels used at execution.
    pub levels: usize,
    pub avg_window: usize,
    /// Listener receives an all-zero message.
    pub ablate_messages: bool,
    pub seed: u64,
}

impl Default for MarlConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            lr: 0.02,
            critic_lr: 0.05,
            message_dim: 2,
            hidden: 16,
            sigma: 0.5,
            levels: 2,
            avg_window: 1000,
            ablate_messages: false,
            seed: 0,
        }
    }
}

impl MarlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(MarlError::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.levels < 2 {
            return Err(MarlError::Config(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.message_dim == 0 || self.hidden == 0 || self.avg_window == 0 {
            return Err(MarlError::Config("message_dim, hidden and avg_window must be positive".into()));
        }
        if !(self.lr > 0.0 && self.critic_lr >= 0.0) {
            return Err(MarlError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actors {
    pub speaker: DenseNet,
    pub listener: DenseNet,
}

impl Actors {
    pub fn random<R: Rng + ?Sized>(env: &ReferentialEnv, message_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let n = env.n_targets();
        let speaker = DenseNet::random(n, &[(hidden, Activation::Tanh), (message_dim, Activation::Tanh)], rng)?;
        let listener = DenseNet::random(message_dim, &[(hidden, Activation::Tanh), (n, Activation::Softmax)], rng)?;
        Ok(Self { speaker, listener })
    }

    pub fn new(speaker: DenseNet, listener: DenseNet) -> Result<Self> {
        if speaker.output_dim() != listener.input_dim() {
            return Err(MarlError::Config(format!(
                "speaker emits {} values, listener reads {}",
                speaker.output_dim(),
                listener.input_dim()
            )));
        }
        if speaker.input_dim() != listener.output_dim() {
            return Err(MarlError::Config("speaker observation and listener action sizes differ".into()));
        }
        Ok(Self { speaker, listener })
    }

    pub fn message_dim(&self) -> usize {
        self.speaker.output_dim()
    }

    fn check_env(&self, env: &ReferentialEnv) -> Result<()> {
        if self.speaker.input_dim() != env.n_targets() {
            return Err(MarlError::Config(format!(
                "actors built for {} targets, environment has {}",
                self.speaker.input_dim(),
                env.n_targets()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub actors: Actors,
    /// Baseline network; not needed for execution.
    pub critic: DenseNet,
    /// Trailing-window mean of realized rewards, one point per episode.
    pub reward_curve: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_reward(&self) -> f64 {
        self.reward_curve.last().copied().unwrap_or(0.0)
    }
}

pub fn ctde_train(env: &ReferentialEnv, cfg: &MarlConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let n = env.n_targets();
    let Actors {
        mut speaker,
        mut listener,
    } = Actors::random(env, cfg.message_dim, cfg.hidden, &mut rng)?;
    let mut critic = DenseNet::random(n, &[(cfg.hidden, Activation::Tanh), (1, Activation::Affine)], &mut rng)?;
    let noise = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE)).expect("sigma validated");

    let mut window = std::collections::VecDeque::with_capacity(cfg.avg_window);
    let mut window_sum = 0.0;
    let mut reward_curve = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let diverged = |e: NnError| match e {
            NnError::Divergence { .. } => MarlError::Divergence { episode },
            e => e.into(),
        };
        let target = rng.random_range(0..n);
        let obs = env.observation(target)?;
        let s_trace = speaker.forward(&obs)?;
        let received: Vec<f64> = if cfg.ablate_messages {
            vec![0.0; cfg.message_dim]
        } else if cfg.sigma > 0.0 {
            s_trace.output().iter().map(|m| m + noise.sample(&mut rng)).collect()
        } else {
            s_trace.output().to_vec()
        };
        let l_trace = listener.forward(&received)?;
        let pi = l_trace.output();
        let action = sample_index(pi, &mut rng);
        let reward = env.reward(target, action);

        let c_trace = critic.forward(&obs)?;
        let advantage = reward - c_trace.output()[0];
        if !advantage.is_finite() {
            return Err(MarlError::Divergence { episode });
        }

        // Surrogate loss -A·ln π(a); the softmax pullback turns this into -A(e_a - π).
        let mut grad_out = vec![0.0; n];
        grad_out[action] = -advantage / pi[action].max(f64::MIN_POSITIVE);
        let lbp = listener.backward_from_output(&l_trace, &grad_out)?;
        if !cfg.ablate_messages {
            // Additive noise has identity Jacobian.
            let sbp = speaker.backward_from_output(&s_trace, &lbp.input_grad)?;
            speaker.apply_sgd(&sbp.grads, cfg.lr).map_err(diverged)?;
        }
        listener.apply_sgd(&lbp.grads, cfg.lr).map_err(diverged)?;
        let (_, cg) = critic.backward(&c_trace, LossKind::Mse, &[reward])?;
        critic.apply_sgd(&cg, cfg.critic_lr).map_err(diverged)?;

        window.push_back(reward);
        window_sum += reward;
        if window.len() > cfg.avg_window {
            window_sum -= window.pop_front().unwrap();
        }
        reward_curve.push(window_sum / window.len() as f64);
    }
    Ok(TrainOutcome {
        actors: Actors { speaker, listener },
        critic,
        reward_curve,
    })
}

/// How messages are presented to the listener at execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantization {
    RealValued,
    Levels(UniformQuantizer),
}

impl Quantization {
    pub fn levels(levels: usize) -> Result<Self> {
        Ok(Self::Levels(UniformQuantizer::new(levels)?))
    }

    pub fn quantizer(&self) -> Option<&UniformQuantizer> {
        match self {
            Quantization::RealValued => None,
            Quantization::Levels(q) => Some(q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub state: usize,
    /// Message as the listener received it.
    pub message: Vec<f64>,
    /// Quantizer cells, absent for real-valued execution.
    pub cells: Option<Vec<usize>>,
    pub action: usize,
}

impl LogRow {
    fn message_key(&self) -> String {
        match &self.cells {
            Some(c) => c.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            None => self.message.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        }
    }
}

/// One greedy decentralized step on `state`.
pub fn act(actors: &Actors, env: &ReferentialEnv, state: usize, quantization: &Quantization) -> Result<LogRow> {
    actors.check_env(env)?;
    let raw = actors.speaker.predict(&env.observation(state)?)?;
    let (message, cells) = match quantization.quantizer() {
        None => (raw, None),
        Some(q) => {
            let cells: Vec<usize> = raw.iter().map(|&x| q.cell(x)).collect();
            (cells.iter().map(|&c| q.midpoint(c)).collect(), Some(cells))
        }
    };
    let pi = actors.listener.predict(&message)?;
    Ok(LogRow {
        state,
        message,
        cells,
        action: argmax(&pi, 0.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub mean_reward: f64,
    pub log: Vec<LogRow>,
}

/// Deterministic execution: episode `i` uses state `i mod n_targets`.
pub fn execute(actors: &Actors, env: &ReferentialEnv, episodes: usize, quantization: &Quantization) -> Result<Execution> {
    let mut log = Vec::with_capacity(episodes);
    let mut total = 0.0;
    for i in 0..episodes {
        let row = act(actors, env, i % env.n_targets(), quantization)?;
        total += env.reward(row.state, row.action);
        log.push(row);
    }
    Ok(Execution {
        mean_reward: if episodes == 0 { 0.0 } else { total / episodes as f64 },
        log,
    })
}

/// CSV columns: `state`, `m0..m{k-1}`, `action`. Message columns hold cell
/// ids when quantized and raw values otherwise.
pub fn write_log_csv<W: io::Write>(log: &[LogRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let width = log.first().map_or(0, |r| r.message.len());
    let mut header = vec!["state".to_string()];
    header.extend((0..width).map(|i| format!("m{i}")));
    header.push("action".into());
    w.write_record(&header).map_err(|e| MarlError::Log(e.to_string()))?;
    for row in log {
        let mut rec = vec![row.state.to_string()];
        match &row.cells {
            Some(c) => rec.extend(c.iter().map(|c| c.to_string())),
            None => rec.extend(row.message.iter().map(|v| format!("{v:?}"))),
        }
        rec.push(row.action.to_string());
        w.write_record(&rec).map_err(|e| MarlError::Log(e.to_string()))?;
    }
    w.flush().map_err(|e| MarlError::Log(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageCount {
    pub message: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateMessages {
    pub state: usize,
    pub messages: Vec<MessageCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrReport {
    pub per_state: Vec<StateMessages>,
    pub mutual_information_bits: f64,
}

/// Per-state message table and plug-in mutual information I(state; message).
pub fn emergent_sr_report(log: &[LogRow]) -> Result<SrReport> {
    if log.is_empty() {
        return Err(MarlError::EmptyLog);
    }
    let mut joint: BTreeMap<(usize, String), usize> = BTreeMap::new();
    let mut by_state: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_msg: BTreeMap<String, usize> = BTreeMap::new();
    for row in log {
        let key = row.message_key();
        *joint.entry((row.state, key.clone())).or_default() += 1;
        *by_state.entry(row.state).or_default() += 1;
        *by_msg.entry(key).or_default() += 1;
    }
    let n = log.len() as f64;
    let mut mi = 0.0;
    for ((s, m), &c) in &joint {
        let p = c as f64 / n;
        let ps = by_state[s] as f64 / n;
        let pm = by_msg[m] as f64 / n;
        mi += p * (p / (ps * pm)).log2();
    }
    let mut per_state: Vec<StateMessages> = by_state
        .keys()
        .map(|&state| StateMessages {
            state,
            messages: Vec::new(),
        })
        .collect();
    for ((s, m), count) in joint {
        let entry = per_state.iter_mut().find(|e| e.state == s).expect("state seen");
        entry.messages.push(MessageCount { message: m, count });
    }
    Ok(SrReport {
        per_state,
        // Clamp round-off below zero.
        mutual_information_bits: mi.max(0.0),
    })
}
