//! Lewis signaling games.
//!
//! A sender observes a type drawn from a prior, emits a signal through a
//! discrete channel, and a receiver maps the received signal to a response.
//! Both share the payoff `payoff[type][response]`.
//!
//! Conventions are learned with Roth-Erev reinforcement: propensities start at
//! one and the realized payoff (scaled by a reinforcement factor) is added to
//! the two cells used in a round. Equilibrium analysis is exact and works on
//! the greedy (row-argmax, lowest index on ties) pure profile.

pub mod rsa;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{sample_index, DiscreteChannel};

pub use rsa::{rsa_infer, RsaDepth, RsaResult};

const PROB_TOL: f64 = 1e-12;
const NASH_TOL: f64 = 1e-9;
/// Largest `n_types * n_signals` that [`best_response_check`] will enumerate.
pub const MAX_ENUMERATION_CELLS: usize = 1_000_000;
/// Lower bound kept on every propensity so rows never lose all mass.
const MIN_PROPENSITY: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LewisError {
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("invalid policies: {0}")]
    InvalidPolicies(String),
    #[error("game too large to enumerate: {cells} cells (limit {limit})")]
    EnumerationRefused { cells: usize, limit: usize },
    #[error("context {context} outside knowledge base of {size} contexts")]
    ContextOutOfRange { context: usize, size: usize },
    #[error("invalid knowledge base: {0}")]
    InvalidKnowledgeBase(String),
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
}

pub type Result<T, E = LewisError> = std::result::Result<T, E>;

fn check_distribution(p: &[f64], what: &str) -> std::result::Result<(), String> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(format!("{what} has negative or non-finite entries"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(format!("{what} sums to {sum}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalingGame {
    n_types: usize,
    n_signals: usize,
    n_responses: usize,
    prior: Vec<f64>,
    payoff: Vec<Vec<f64>>,
    channel: DiscreteChannel,
}

impl SignalingGame {
    pub fn new(prior: Vec<f64>, payoff: Vec<Vec<f64>>, channel: DiscreteChannel) -> Result<Self> {
        let n_types = prior.len();
        if n_types == 0 {
            return Err(LewisError::InvalidGame("no types".into()));
        }
        check_distribution(&prior, "type prior").map_err(LewisError::InvalidGame)?;
        if payoff.len() != n_types {
            return Err(LewisError::InvalidGame(format!(
                "payoff has {} rows for {n_types} types",
                payoff.len()
            )));
        }
        let n_responses = payoff[0].len();
        if n_responses == 0 || payoff.iter().any(|r| r.len() != n_responses) {
            return Err(LewisError::InvalidGame("payoff rows must share a positive length".into()));
        }
        if payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LewisError::InvalidGame("payoff must be finite".into()));
        }
        Ok(Self {
            n_types,
            n_signals: channel.alphabet_size(),
            n_responses,
            prior,
            payoff,
            channel,
        })
    }

    /// Uniform prior and identity payoff: 1 iff the response index equals the
    /// type index.
    pub fn identity(n_types: usize, n_responses: usize, channel: DiscreteChannel) -> Result<Self> {
        if n_types == 0 {
            return Err(LewisError::InvalidGame("no types".into()));
        }
        let prior = vec![1.0 / n_types as f64; n_types];
        let payoff = (0..n_types)
            .map(|t| (0..n_responses).map(|r| if r == t { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(prior, payoff, channel)
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_signals(&self) -> usize {
        self.n_signals
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn payoff(&self, t: usize, r: usize) -> f64 {
        self.payoff[t][r]
    }

    pub fn payoff_matrix(&self) -> &[Vec<f64>] {
        &self.payoff
    }

    pub fn channel(&self) -> &DiscreteChannel {
        &self.channel
    }

    /// Best achievable payoff for type `t`.
    pub fn best_payoff(&self, t: usize) -> f64 {
        self.payoff[t].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Expected payoff if every type were answered optimally.
    pub fn payoff_upper_bound(&self) -> f64 {
        (0..self.n_types).map(|t| self.prior[t] * self.best_payoff(t)).sum()
    }

    /// Response maximizing `sum_t weights[t] * payoff[t][r]`, lowest index on ties.
    pub fn best_response_to(&self, weights: &[f64]) -> usize {
        let scores: Vec<f64> = (0..self.n_responses)
            .map(|r| weights.iter().enumerate().map(|(t, w)| w * self.payoff[t][r]).sum())
            .collect();
        argmax(&scores, 0.0)
    }
}

/// Index of the maximum; entries within `tol` of the maximum count as ties and
/// the lowest such index wins.
pub fn argmax(values: &[f64], tol: f64) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&v| v >= max - tol)
        .expect("argmax of empty slice")
}

/// Sender propensities `[type][signal]` and receiver propensities
/// `[signal][response]`. Sampling probabilities are row-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub sender: Vec<Vec<f64>>,
    pub receiver: Vec<Vec<f64>>,
}

/// Deterministic type→signal and signal→response maps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GreedyProfile {
    pub sender: Vec<usize>,
    pub receiver: Vec<usize>,
}

impl PolicyPair {
    /// All propensities one.
    pub fn uniform(game: &SignalingGame) -> Self {
        Self {
            sender: vec![vec![1.0; game.n_signals]; game.n_types],
            receiver: vec![vec![1.0; game.n_responses]; game.n_signals],
        }
    }

    pub fn from_pure(sender_map: &[usize], receiver_map: &[usize], n_signals: usize, n_responses: usize) -> Self {
        let one_hot = |i: usize, n: usize| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
        Self {
            sender: sender_map.iter().map(|&s| one_hot(s, n_signals)).collect(),
            receiver: receiver_map.iter().map(|&r| one_hot(r, n_responses)).collect(),
        }
    }

    pub fn from_profile(profile: &GreedyProfile, game: &SignalingGame) -> Self {
        Self::from_pure(&profile.sender, &profile.receiver, game.n_signals, game.n_responses)
    }

    pub fn validate(&self, game: &SignalingGame) -> Result<()> {
        let bad = |m: &Vec<Vec<f64>>, rows: usize, cols: usize| {
            m.len() != rows
                || m.iter().any(|r| {
                    r.len() != cols || r.iter().any(|v| !v.is_finite() || *v < 0.0) || r.iter().sum::<f64>() <= 0.0
                })
        };
        if bad(&self.sender, game.n_types, game.n_signals) {
            return Err(LewisError::InvalidPolicies("sender matrix shape or rows".into()));
        }
        if bad(&self.receiver, game.n_signals, game.n_responses) {
            return Err(LewisError::InvalidPolicies("receiver matrix shape or rows".into()));
        }
        Ok(())
    }

    pub fn sender_prob(&self, t: usize, s: usize) -> f64 {
        let row = &self.sender[t];
        row[s] / row.iter().sum::<f64>()
    }

    pub fn receiver_prob(&self, s: usize, r: usize) -> f64 {
        let row = &self.receiver[s];
        row[r] / row.iter().sum::<f64>()
    }

    fn normalized(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect()
    }

    pub fn sender_probs(&self) -> Vec<Vec<f64>> {
        Self::normalized(&self.sender)
    }

    pub fn receiver_probs(&self) -> Vec<Vec<f64>> {
        Self::normalized(&self.receiver)
    }

    /// Greedy profile with probability ties within `tol` resolved to the lowest index.
    pub fn greedy_with_tol(&self, tol: f64) -> GreedyProfile {
        GreedyProfile {
            sender: self.sender_probs().iter().map(|r| argmax(r, tol)).collect(),
            receiver: self.receiver_probs().iter().map(|r| argmax(r, tol)).collect(),
        }
    }

    pub fn greedy(&self) -> GreedyProfile {
        self.greedy_with_tol(0.0)
    }
}

/// One round of play.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(rename = "type")]
    pub type_: usize,
    pub sent_signal: usize,
    pub received_signal: usize,
    pub response: usize,
    pub payoff: f64,
}

pub fn play_round<R: Rng + ?Sized>(game: &SignalingGame, policies: &PolicyPair, rng: &mut R) -> Transcript {
    let type_ = sample_index(&game.prior, rng);
    let sent_signal = sample_index(&policies.sender[type_], rng);
    let received_signal = sample_index(&game.channel.matrix()[sent_signal], rng);
    let response = sample_index(&policies.receiver[received_signal], rng);
    Transcript {
        type_,
        sent_signal,
        received_signal,
        response,
        payoff: game.payoff[type_][response],
    }
}

/// Roth-Erev update: adds `reinforcement * payoff` to the sender cell
/// `(type, sent)` and the receiver cell `(received, response)`.
pub fn reinforce_update(policies: &PolicyPair, transcript: &Transcript, reinforcement: f64) -> PolicyPair {
    let mut next = policies.clone();
    reinforce_in_place(&mut next, transcript, reinforcement);
    next
}

fn reinforce_in_place(policies: &mut PolicyPair, tr: &Transcript, reinforcement: f64) {
    let delta = reinforcement * tr.payoff;
    if delta == 0.0 {
        return;
    }
    let s = &mut policies.sender[tr.type_][tr.sent_signal];
    *s = (*s + delta).max(MIN_PROPENSITY);
    let r = &mut policies.receiver[tr.received_signal][tr.response];
    *r = (*r + delta).max(MIN_PROPENSITY);
}

/// Exact expected payoff of (possibly mixed) policies.
pub fn expected_payoff(game: &SignalingGame, policies: &PolicyPair) -> f64 {
    let sender = policies.sender_probs();
    let receiver = policies.receiver_probs();
    let ch = game.channel.matrix();
    let mut total = 0.0;
    for (t, row) in sender.iter().enumerate() {
        let mut per_type = 0.0;
        for (s, &ps) in row.iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            for (s2, &pc) in ch[s].iter().enumerate() {
                if pc == 0.0 {
                    continue;
                }
                let v: f64 = receiver[s2].iter().zip(&game.payoff[t]).map(|(pr, u)| pr * u).sum();
                per_type += ps * pc * v;
            }
        }
        total += game.prior[t] * per_type;
    }
    total
}

pub fn profile_payoff(game: &SignalingGame, profile: &GreedyProfile) -> f64 {
    expected_payoff(game, &PolicyPair::from_profile(profile, game))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    Sender,
    Receiver,
}

/// A unilateral pure deviation: `player` switches row `row` from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub player: Player,
    pub row: usize,
    pub from: usize,
    pub to: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashCheck {
    pub is_nash: bool,
    pub improving_deviations: Vec<Deviation>,
}

/// Checks every single-row pure deviation of the greedy profile.
///
/// Payoff is common to both players and additive over sender rows (types) and
/// over receiver rows (received signals), so no multi-row deviation can
/// improve unless some single-row one does.
pub fn best_response_check(game: &SignalingGame, policies: &PolicyPair) -> Result<NashCheck> {
    let cells = game.n_types.saturating_mul(game.n_signals);
    if cells > MAX_ENUMERATION_CELLS {
        return Err(LewisError::EnumerationRefused {
            cells,
            limit: MAX_ENUMERATION_CELLS,
        });
    }
    policies.validate(game)?;
    let profile = policies.greedy();
    Ok(check_profile(game, &profile))
}

pub fn check_profile(game: &SignalingGame, profile: &GreedyProfile) -> NashCheck {
    let base = profile_payoff(game, profile);
    let mut improving = Vec::new();
    for t in 0..game.n_types {
        for s in 0..game.n_signals {
            if s == profile.sender[t] {
                continue;
            }
            let mut dev = profile.clone();
            dev.sender[t] = s;
            let gain = profile_payoff(game, &dev) - base;
            if gain > NASH_TOL {
                improving.push(Deviation {
                    player: Player::Sender,
                    row: t,
                    from: profile.sender[t],
                    to: s,
                    gain,
                });
            }
        }
    }
    for s in 0..game.n_signals {
        for r in 0..game.n_responses {
            if r == profile.receiver[s] {
                continue;
            }
            let mut dev = profile.clone();
            dev.receiver[s] = r;
            let gain = profile_payoff(game, &dev) - base;
            if gain > NASH_TOL {
                improving.push(Deviation {
                    player: Player::Receiver,
                    row: s,
                    from: profile.receiver[s],
                    to: r,
                    gain,
                });
            }
        }
    }
    NashCheck {
        is_nash: improving.is_empty(),
        improving_deviations: improving,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumClass {
    Separating,
    PartialPooling,
    Pooling,
}

/// Classifies the greedy type→signal map: injective is separating, constant
/// is pooling, anything else partial pooling. A single type is separating.
pub fn classify_equilibrium(policies: &PolicyPair, tol: f64) -> EquilibriumClass {
    classify_sender_map(&policies.greedy_with_tol(tol).sender)
}

pub fn classify_sender_map(map: &[usize]) -> EquilibriumClass {
    let mut seen = map.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() == map.len() {
        EquilibriumClass::Separating
    } else if seen.len() == 1 {
        EquilibriumClass::Pooling
    } else {
        EquilibriumClass::PartialPooling
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_rounds: usize,
    /// Consecutive rounds the greedy profile must stay unchanged.
    pub window: usize,
    /// Probability gap under which greedy rows count as ties.
    pub stability_tol: f64,
    pub reinforcement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_rounds: 50_000,
            window: 2_000,
            stability_tol: 1e-3,
            reinforcement: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub rounds: usize,
    /// `(round, expected payoff of the current mixed policies)`, downsampled.
    pub payoff_trajectory: Vec<(usize, f64)>,
    pub greedy: GreedyProfile,
    pub greedy_payoff: f64,
    pub classification: EquilibriumClass,
    pub is_nash: bool,
}

const TRAJECTORY_POINTS: usize = 100;

pub fn train_to_equilibrium<R: Rng + ?Sized>(
    game: &SignalingGame,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(PolicyPair, ConvergenceReport)> {
    if config.window >= config.max_rounds {
        return Err(LewisError::InvalidGame(format!(
            "window {} must be below max_rounds {}",
            config.window, config.max_rounds
        )));
    }
    let mut policies = PolicyPair::uniform(game);
    let stride = (config.max_rounds / TRAJECTORY_POINTS).max(1);
    let mut trajectory = vec![(0, expected_payoff(game, &policies))];

    let mut greedy = policies.greedy_with_tol(config.stability_tol);
    // An already optimal profile needs no training.
    let initial_payoff = profile_payoff(game, &greedy);
    let mut converged = (initial_payoff - game.payoff_upper_bound()).abs() <= NASH_TOL
        && check_profile(game, &greedy).is_nash;
    let mut rounds = 0;
    let mut stable = 0;

    while !converged && rounds < config.max_rounds {
        let tr = play_round(game, &policies, rng);
        reinforce_in_place(&mut policies, &tr, config.reinforcement);
        rounds += 1;
        if rounds % stride == 0 {
            trajectory.push((rounds, expected_payoff(game, &policies)));
        }
        let next = policies.greedy_with_tol(config.stability_tol);
        if next == greedy {
            stable += 1;
        } else {
            greedy = next;
            stable = 0;
        }
        if stable > 0 && stable % config.window == 0 && check_profile(game, &greedy).is_nash {
            converged = true;
        }
    }
    if trajectory.last().map(|p| p.0) != Some(rounds) {
        trajectory.push((rounds, expected_payoff(game, &policies)));
    }
    let is_nash = check_profile(game, &greedy).is_nash;
    let report = ConvergenceReport {
        converged,
        rounds,
        payoff_trajectory: trajectory,
        greedy_payoff: profile_payoff(game, &greedy),
        classification: classify_sender_map(&greedy.sender),
        greedy,
        is_nash,
    };
    Ok((policies, report))
}

/// Best payoff over all pure sender/receiver profiles, by enumeration.
pub fn pure_profile_optimum(game: &SignalingGame) -> Result<f64> {
    let (t, s, r) = (game.n_types(), game.n_signals(), game.n_responses());
    let cells = (s as f64).powi(t as i32) * (r as f64).powi(s as i32);
    if cells > MAX_ENUMERATION_CELLS as f64 {
        return Err(LewisError::EnumerationRefused {
            cells: cells.min(usize::MAX as f64) as usize,
            limit: MAX_ENUMERATION_CELLS,
        });
    }
    let mut sender = vec![0usize; t];
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut receiver = vec![0usize; s];
        loop {
            let profile = GreedyProfile {
                sender: sender.clone(),
                receiver: receiver.clone(),
            };
            best = best.max(profile_payoff(game, &profile));
            if !odometer(&mut receiver, r) {
                break;
            }
        }
        if !odometer(&mut sender, s) {
            break;
        }
    }
    Ok(best)
}

/// Advances a base-`base` counter; false once it wraps to all zeros.
fn odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Context-conditioned priors over types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    context_priors: Vec<Vec<f64>>,
}

impl KnowledgeBase {
    pub fn new(context_priors: Vec<Vec<f64>>) -> Result<Self> {
        if context_priors.is_empty() {
            return Err(LewisError::InvalidKnowledgeBase("no contexts".into()));
        }
        let n = context_priors[0].len();
        for (c, p) in context_priors.iter().enumerate() {
            if p.len() != n {
                return Err(LewisError::InvalidKnowledgeBase(format!("context {c} has wrong length")));
            }
            check_distribution(p, &format!("context {c} prior")).map_err(LewisError::InvalidKnowledgeBase)?;
        }
        Ok(Self { context_priors })
    }

    /// One context per type, each putting all mass on that type.
    pub fn degenerate(n_types: usize) -> Self {
        Self {
            context_priors: (0..n_types)
                .map(|c| (0..n_types).map(|t| if t == c { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn n_contexts(&self) -> usize {
        self.context_priors.len()
    }

    pub fn prior(&self, context: usize) -> Result<&[f64]> {
        self.context_priors
            .get(context)
            .map(Vec::as_slice)
            .ok_or(LewisError::ContextOutOfRange {
                context,
                size: self.context_priors.len(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbDecision {
    pub response: usize,
    /// No type consistent with the signal has mass under the context prior.
    pub ambiguous: bool,
}

/// Receiver decoding with side information: best response to the posterior
/// `p(type | signal, context) ∝ kb(type | context) · 1[sender maps type to signal]`.
pub fn kb_decode(
    signal: usize,
    context: usize,
    kb: &KnowledgeBase,
    game: &SignalingGame,
    sender_map: &[usize],
) -> Result<KbDecision> {
    let prior = kb.prior(context)?;
    if prior.len() != game.n_types || sender_map.len() != game.n_types {
        return Err(LewisError::InvalidKnowledgeBase(
            "knowledge base and sender map must cover every type".into(),
        ));
    }
    let posterior: Vec<f64> = prior
        .iter()
        .zip(sender_map)
        .map(|(p, &s)| if s == signal { *p } else { 0.0 })
        .collect();
    if posterior.iter().sum::<f64>() <= 0.0 {
        return Ok(KbDecision {
            response: game.best_response_to(&game.prior),
            ambiguous: true,
        });
    }
    Ok(KbDecision {
        response: game.best_response_to(&posterior),
        ambiguous: false,
    })
}

/// A receiver decoding with `receiver_kb` while contexts and types are
/// actually drawn from `context_weights` and `true_kb`.
#[derive(Debug, Clone, PartialEq)]
pub struct KbMismatch {
    pub true_kb: KnowledgeBase,
    pub receiver_kb: KnowledgeBase,
    pub context_weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// Fraction of rounds where the channel altered the signal.
    pub level_a_rate: f64,
    /// Error rate of the greedy profile on clean receptions caused by signals
    /// shared between several types.
    pub level_b_rate: f64,
    /// Extra error from decoding with a mismatched knowledge base instead of
    /// the true one.
    pub level_c_rate: f64,
}

fn is_error(game: &SignalingGame, t: usize, r: usize) -> bool {
    game.payoff[t][r] < game.best_payoff(t) - PROB_TOL
}

pub fn error_decomposition(
    transcripts: &[Transcript],
    game: &SignalingGame,
    policies: &PolicyPair,
    kb: Option<&KbMismatch>,
) -> Result<ErrorDecomposition> {
    let level_a_rate = if transcripts.is_empty() {
        0.0
    } else {
        transcripts.iter().filter(|t| t.received_signal != t.sent_signal).count() as f64 / transcripts.len() as f64
    };

    let profile = policies.greedy();
    let mut users = vec![0usize; game.n_signals];
    for &s in &profile.sender {
        users[s] += 1;
    }
    let level_b_rate = (0..game.n_types)
        .filter(|&t| {
            let s = profile.sender[t];
            users[s] > 1 && is_error(game, t, profile.receiver[s])
        })
        .map(|t| game.prior[t])
        .sum();

    let level_c_rate = match kb {
        None => 0.0,
        Some(m) => {
            if m.context_weights.len() != m.true_kb.n_contexts() || m.receiver_kb.n_contexts() != m.true_kb.n_contexts() {
                return Err(LewisError::InvalidKnowledgeBase("context spaces differ".into()));
            }
            let mut extra = 0.0;
            for (c, &w) in m.context_weights.iter().enumerate() {
                let truth = m.true_kb.prior(c)?;
                for (t, &pt) in truth.iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    let s = profile.sender[t];
                    let with_true = kb_decode(s, c, &m.true_kb, game, &profile.sender)?.response;
                    let with_recv = kb_decode(s, c, &m.receiver_kb, game, &profile.sender)?.response;
                    let e = |r| if is_error(game, t, r) { 1.0 } else { 0.0 };
                    extra += w * pt * (e(with_recv) - e(with_true));
                }
            }
            extra
        }
    };

    Ok(ErrorDecomposition {
        level_a_rate,
        level_b_rate,
        level_c_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn clean(n: usize) -> DiscreteChannel {
        DiscreteChannel::identity(n).unwrap()
    }

    fn separating2() -> PolicyPair {
        PolicyPair::from_pure(&[0, 1], &[0, 1], 2, 2)
    }

    #[test]
    fn separating_clean_always_pays() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        let mut rng = seeded(0);
        for _ in 0..1000 {
            assert_eq!(play_round(&game, &separating2(), &mut rng).payoff, 1.0);
        }
        assert_eq!(expected_payoff(&game, &separating2()), 1.0);
    }

    #[test]
    fn separating_over_bsc() {
        let game = SignalingGame::identity(2, 2, DiscreteChannel::bsc(0.1).unwrap()).unwrap();
        assert!((expected_payoff(&game, &separating2()) - 0.9).abs() < 1e-15);
        let mut rng = seeded(3);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| play_round(&game, &separating2(), &mut rng).payoff).sum::<f64>() / n as f64;
        assert!((mean - 0.9).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn uniform_policies_pay_half() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        let p = PolicyPair::uniform(&game);
        assert!((expected_payoff(&game, &p) - 0.5).abs() < 1e-15);
        let mut rng = seeded(4);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| play_round(&game, &p, &mut rng).payoff).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn reinforcement_touches_only_chosen_cells() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        let p = PolicyPair::uniform(&game);
        let zero = Transcript { type_: 0, sent_signal: 1, received_signal: 1, response: 1, payoff: 0.0 };
        assert_eq!(reinforce_update(&p, &zero, 1.0), p);
        let hit = Transcript { type_: 1, sent_signal: 0, received_signal: 0, response: 1, payoff: 1.0 };
        let q = reinforce_update(&p, &hit, 1.0);
        assert_eq!(q.sender, vec![vec![1.0, 1.0], vec![2.0, 1.0]]);
        assert_eq!(q.receiver, vec![vec![1.0, 2.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn negative_payoff_never_drives_propensity_negative() {
        let game = SignalingGame::new(vec![1.0], vec![vec![-5.0]], clean(1)).unwrap();
        let p = PolicyPair::uniform(&game);
        let tr = play_round(&game, &p, &mut seeded(0));
        let q = reinforce_update(&p, &tr, 1.0);
        assert!(q.sender[0][0] > 0.0 && q.receiver[0][0] > 0.0);
    }

    #[test]
    fn one_type_game_converges_immediately() {
        let game = SignalingGame::identity(1, 1, clean(3)).unwrap();
        let (_, report) = train_to_equilibrium(&game, &TrainConfig::default(), &mut seeded(0)).unwrap();
        assert!(report.converged);
        assert_eq!(report.rounds, 0);
        assert_eq!(report.classification, EquilibriumClass::Separating);
    }

    #[test]
    fn two_by_two_converges_to_signaling_system() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        let (_, report) = train_to_equilibrium(&game, &TrainConfig::default(), &mut seeded(1)).unwrap();
        assert!(report.converged);
        assert!(report.is_nash);
        assert_eq!(report.greedy_payoff, 1.0);
        assert_eq!(report.classification, EquilibriumClass::Separating);
    }

    #[test]
    fn three_types_two_signals_reaches_two_thirds() {
        let game = SignalingGame::identity(3, 3, clean(2)).unwrap();
        let (_, report) = train_to_equilibrium(&game, &TrainConfig::default(), &mut seeded(2)).unwrap();
        assert!(report.converged);
        assert!((report.greedy_payoff - 2.0 / 3.0).abs() < 1e-12, "{}", report.greedy_payoff);
        assert_eq!(report.classification, EquilibriumClass::PartialPooling);
    }

    #[test]
    fn window_must_be_below_max_rounds() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        let cfg = TrainConfig { max_rounds: 10, window: 10, ..Default::default() };
        assert!(train_to_equilibrium(&game, &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn nash_checks() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        assert!(best_response_check(&game, &separating2()).unwrap().is_nash);

        // Pooling both types on signal 0 while signal 1 is free and decoded as type 1.
        let game3 = SignalingGame::identity(2, 2, clean(3)).unwrap();
        let pooled = PolicyPair::from_pure(&[0, 0], &[0, 1, 1], 3, 2);
        let check = best_response_check(&game3, &pooled).unwrap();
        assert!(!check.is_nash);
        assert!(check
            .improving_deviations
            .iter()
            .any(|d| d.player == Player::Sender && d.row == 1 && d.to == 1));

        let one_signal = SignalingGame::identity(2, 2, clean(1)).unwrap();
        let p = PolicyPair::from_pure(&[0, 0], &[0], 1, 2);
        assert!(best_response_check(&one_signal, &p).unwrap().is_nash);
    }

    #[test]
    fn pure_optimum_by_enumeration() {
        let pooled = SignalingGame::identity(3, 3, clean(2)).unwrap();
        assert!((pure_profile_optimum(&pooled).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let full = SignalingGame::identity(2, 2, clean(3)).unwrap();
        assert_eq!(pure_profile_optimum(&full).unwrap(), 1.0);
        let huge = SignalingGame::identity(20, 20, clean(20)).unwrap();
        assert!(matches!(
            pure_profile_optimum(&huge),
            Err(LewisError::EnumerationRefused { .. })
        ));
    }

    #[test]
    fn enumeration_refused_for_huge_games() {
        let game = SignalingGame::identity(1001, 1, clean(1000)).unwrap();
        let p = PolicyPair::uniform(&game);
        assert!(matches!(
            best_response_check(&game, &p),
            Err(LewisError::EnumerationRefused { .. })
        ));
    }

    #[test]
    fn classification() {
        let p = PolicyPair::from_pure(&[0, 1, 2], &[0, 1, 2], 3, 3);
        assert_eq!(classify_equilibrium(&p, 0.0), EquilibriumClass::Separating);
        let p = PolicyPair::from_pure(&[0, 0, 0], &[0, 1], 2, 3);
        assert_eq!(classify_equilibrium(&p, 0.0), EquilibriumClass::Pooling);
        let p = PolicyPair::from_pure(&[0, 0, 1], &[0, 2], 2, 3);
        assert_eq!(classify_equilibrium(&p, 0.0), EquilibriumClass::PartialPooling);
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let p = PolicyPair { sender: vec![vec![2.0, 2.0]], receiver: vec![vec![1.0, 1.0], vec![1.0, 1.0001]] };
        let g = p.greedy_with_tol(1e-3);
        assert_eq!(g.sender, vec![0]);
        assert_eq!(g.receiver, vec![0, 0]);
        assert_eq!(p.greedy().receiver, vec![0, 1]);
    }

    fn pooled_3x2() -> (SignalingGame, PolicyPair) {
        let game = SignalingGame::identity(3, 3, clean(2)).unwrap();
        let p = PolicyPair::from_pure(&[0, 0, 1], &[0, 2], 2, 3);
        (game, p)
    }

    #[test]
    fn kb_decoding() {
        let (game, p) = pooled_3x2();
        let map = p.greedy().sender;
        let kb = KnowledgeBase::new(vec![vec![0.9, 0.1, 0.0], vec![0.1, 0.9, 0.0]]).unwrap();
        assert_eq!(kb_decode(0, 0, &kb, &game, &map).unwrap().response, 0);
        assert_eq!(kb_decode(0, 1, &kb, &game, &map).unwrap().response, 1);

        let degenerate = KnowledgeBase::degenerate(3);
        for t in 0..3 {
            let d = kb_decode(map[t], t, &degenerate, &game, &map).unwrap();
            assert_eq!(d.response, t);
            assert!(!d.ambiguous);
        }

        let uniform = KnowledgeBase::new(vec![vec![1.0 / 3.0; 3]]).unwrap();
        for s in 0..2 {
            let weights: Vec<f64> = (0..3).map(|t| if map[t] == s { 1.0 / 3.0 } else { 0.0 }).collect();
            assert_eq!(kb_decode(s, 0, &uniform, &game, &map).unwrap().response, game.best_response_to(&weights));
        }

        // Signal 1 is only used by type 2, which context 0 rules out.
        let d = kb_decode(1, 0, &kb, &game, &map).unwrap();
        assert!(d.ambiguous);
        assert!(matches!(kb_decode(0, 5, &kb, &game, &map), Err(LewisError::ContextOutOfRange { .. })));
    }

    #[test]
    fn error_levels_perfect_case() {
        let game = SignalingGame::identity(2, 2, clean(2)).unwrap();
        let p = separating2();
        let mut rng = seeded(0);
        let trs: Vec<_> = (0..1000).map(|_| play_round(&game, &p, &mut rng)).collect();
        let kb = KnowledgeBase::degenerate(2);
        let m = KbMismatch { true_kb: kb.clone(), receiver_kb: kb, context_weights: vec![0.5, 0.5] };
        let e = error_decomposition(&trs, &game, &p, Some(&m)).unwrap();
        assert_eq!((e.level_a_rate, e.level_b_rate, e.level_c_rate), (0.0, 0.0, 0.0));
    }

    #[test]
    fn error_levels_channel_and_pooling() {
        let game = SignalingGame::identity(2, 2, DiscreteChannel::bsc(0.1).unwrap()).unwrap();
        let p = separating2();
        let mut rng = seeded(9);
        let trs: Vec<_> = (0..100_000).map(|_| play_round(&game, &p, &mut rng)).collect();
        let e = error_decomposition(&trs, &game, &p, None).unwrap();
        assert!((e.level_a_rate - 0.1).abs() < 0.01);

        let (game, p) = pooled_3x2();
        let e = error_decomposition(&[], &game, &p, None).unwrap();
        assert!((e.level_b_rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_kb_adds_level_c_error() {
        let (game, p) = pooled_3x2();
        let truth = KnowledgeBase::degenerate(3);
        // The receiver believes each context points at the other pooled type.
        let wrong = KnowledgeBase::new(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let m = KbMismatch { true_kb: truth, receiver_kb: wrong, context_weights: vec![1.0 / 3.0; 3] };
        let e = error_decomposition(&[], &game, &p, Some(&m)).unwrap();
        assert!((e.level_c_rate - 2.0 / 3.0).abs() < 1e-12, "{}", e.level_c_rate);
    }
}
