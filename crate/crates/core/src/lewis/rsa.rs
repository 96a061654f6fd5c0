//! Rational speech act inference over a boolean lexicon.
//!
//! - literal listener `L0(t | s) ∝ lexicon[s][t] · prior[t]`
//! - pragmatic speaker `S1(s | t) ∝ exp(α · ln L0(t | s))`, normalized over signals
//! - pragmatic listener `L1(t | s) ∝ S1(s | t) · prior[t]`

use serde::{Deserialize, Serialize};

use super::{LewisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RsaDepth {
    Literal,
    Pragmatic,
}

/// All matrices are indexed `[signal][type]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaResult {
    pub literal_listener: Vec<Vec<f64>>,
    pub speaker: Option<Vec<Vec<f64>>>,
    pub pragmatic_listener: Option<Vec<Vec<f64>>>,
}

impl RsaResult {
    /// Listener distribution at the requested depth.
    pub fn listener(&self) -> &[Vec<f64>] {
        self.pragmatic_listener.as_deref().unwrap_or(&self.literal_listener)
    }
}

fn normalize_rows(m: &mut [Vec<f64>]) {
    for row in m {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

pub fn rsa_infer(lexicon: &[Vec<bool>], prior: &[f64], depth: RsaDepth, rationality: f64) -> Result<RsaResult> {
    let n_types = prior.len();
    if lexicon.is_empty() || n_types == 0 {
        return Err(LewisError::InvalidLexicon("empty lexicon or prior".into()));
    }
    if !(rationality > 0.0 && rationality.is_finite()) {
        return Err(LewisError::InvalidLexicon(format!("rationality {rationality} must be positive")));
    }
    for (s, row) in lexicon.iter().enumerate() {
        if row.len() != n_types {
            return Err(LewisError::InvalidLexicon(format!("signal {s} row has wrong length")));
        }
        if !row.iter().zip(prior).any(|(&b, &p)| b && p > 0.0) {
            return Err(LewisError::InvalidLexicon(format!("signal {s} is true of no type")));
        }
    }

    let mut l0: Vec<Vec<f64>> = lexicon
        .iter()
        .map(|row| row.iter().zip(prior).map(|(&b, &p)| if b { p } else { 0.0 }).collect())
        .collect();
    normalize_rows(&mut l0);

    if depth == RsaDepth::Literal {
        return Ok(RsaResult {
            literal_listener: l0,
            speaker: None,
            pragmatic_listener: None,
        });
    }

    let n_signals = lexicon.len();
    let mut s1 = vec![vec![0.0; n_types]; n_signals];
    for t in 0..n_types {
        let utilities: Vec<Option<f64>> = (0..n_signals)
            .map(|s| (l0[s][t] > 0.0).then(|| rationality * l0[s][t].ln()))
            .collect();
        let max = utilities.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let weights: Vec<f64> = utilities.iter().map(|u| u.map_or(0.0, |u| (u - max).exp())).collect();
        let total: f64 = weights.iter().sum();
        for s in 0..n_signals {
            s1[s][t] = weights[s] / total;
        }
    }

    let mut l1: Vec<Vec<f64>> = s1
        .iter()
        .map(|row| row.iter().zip(prior).map(|(v, p)| v * p).collect())
        .collect();
    normalize_rows(&mut l1);

    Ok(RsaResult {
        literal_listener: l0,
        speaker: Some(s1),
        pragmatic_listener: Some(l1),
    })
}
