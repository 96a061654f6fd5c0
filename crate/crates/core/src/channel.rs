//! Stochastic channels.
//!
//! [`DiscreteChannel`] is a discrete memoryless channel over a finite alphabet
//! given by its row-stochastic confusion matrix. [`VectorChannel`] carries
//! real-valued representations, either untouched, with additive Gaussian
//! noise, or quantized to a finite alphabet and pushed through a per-symbol
//! discrete channel.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("symbol {symbol} out of range for alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },
    #[error("confusion matrix invalid: {0}")]
    InvalidMatrix(String),
    #[error("non-finite input at coordinate {0}")]
    NonFinite(usize),
    #[error("invalid channel parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = ChannelError> = std::result::Result<T, E>;

/// Entry `[i][j]` is the probability that symbol `i` is received as `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DiscreteChannel {
    matrix: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for DiscreteChannel {
    type Error = ChannelError;

    fn try_from(matrix: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(matrix)
    }
}

impl From<DiscreteChannel> for Vec<Vec<f64>> {
    fn from(ch: DiscreteChannel) -> Self {
        ch.matrix
    }
}

impl DiscreteChannel {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Err(ChannelError::InvalidMatrix("empty alphabet".into()));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(ChannelError::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ChannelError::InvalidMatrix(format!("row {i} has entry {v} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ChannelError::InvalidMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::symmetric(size, 0.0)
    }

    /// Binary symmetric channel with crossover probability `p`.
    pub fn bsc(p: f64) -> Result<Self> {
        Self::symmetric(2, p)
    }

    /// q-ary symmetric channel: a symbol survives with probability `1 - p`,
    /// otherwise it lands uniformly on one of the other `size - 1` symbols.
    pub fn symmetric(size: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ChannelError::InvalidParameter(format!("error probability {p}")));
        }
        if size == 1 && p > 0.0 {
            return Err(ChannelError::InvalidParameter(
                "a 1-symbol channel cannot flip".into(),
            ));
        }
        let off = if size > 1 { p / (size - 1) as f64 } else { 0.0 };
        let matrix = (0..size)
            .map(|i| (0..size).map(|j| if i == j { 1.0 - p } else { off }).collect())
            .collect();
        Self::new(matrix)
    }

    /// Every input is received as a uniformly random symbol.
    pub fn uniform(size: usize) -> Result<Self> {
        let v = 1.0 / size as f64;
        Self::new(vec![vec![v; size]; size])
    }

    pub fn alphabet_size(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn prob(&self, sent: usize, received: usize) -> f64 {
        self.matrix[sent][received]
    }

    pub fn is_identity(&self) -> bool {
        self.matrix
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn transmit_symbol<R: Rng + ?Sized>(&self, symbol: usize, rng: &mut R) -> Result<usize> {
        let row = self.matrix.get(symbol).ok_or(ChannelError::SymbolOutOfRange {
            symbol,
            size: self.alphabet_size(),
        })?;
        Ok(sample_index(row, rng))
    }
}

/// Draws an index from an unnormalized non-negative weight vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last_positive = i;
        }
    }
    last_positive
}

/// Uniform scalar quantizer on `[-1, 1]` with `levels` equal cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformQuantizer {
    levels: usize,
}

impl UniformQuantizer {
    pub fn new(levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(ChannelError::InvalidParameter(format!(
                "quantizer needs at least 2 levels, got {levels}"
            )));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Cell index of `x` after clipping to `[-1, 1]`.
    pub fn cell(&self, x: f64) -> usize {
        let x = x.clamp(-1.0, 1.0);
        let idx = ((x + 1.0) / 2.0 * self.levels as f64).floor() as usize;
        idx.min(self.levels - 1)
    }

    pub fn midpoint(&self, cell: usize) -> f64 {
        -1.0 + (cell as f64 + 0.5) * 2.0 / self.levels as f64
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.midpoint(self.cell(x))
    }
}

/// Channel for real-valued representation vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorChannel {
    Clean,
    AdditiveGaussian { sigma: f64 },
    QuantizeThenDmc {
        quantizer: UniformQuantizer,
        per_symbol: DiscreteChannel,
    },
}

impl VectorChannel {
    pub fn additive_gaussian(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ChannelError::InvalidParameter(format!("sigma {sigma}")));
        }
        Ok(Self::AdditiveGaussian { sigma })
    }

    pub fn quantize_then_dmc(levels: usize, per_symbol: DiscreteChannel) -> Result<Self> {
        let quantizer = UniformQuantizer::new(levels)?;
        if per_symbol.alphabet_size() != levels {
            return Err(ChannelError::InvalidParameter(format!(
                "per-symbol channel has {} symbols, quantizer has {levels} levels",
                per_symbol.alphabet_size()
            )));
        }
        Ok(Self::QuantizeThenDmc { quantizer, per_symbol })
    }

    pub fn transmit_vector<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(ChannelError::NonFinite(i));
        }
        match self {
            VectorChannel::Clean => Ok(v.to_vec()),
            VectorChannel::AdditiveGaussian { sigma } => {
                if *sigma == 0.0 {
                    return Ok(v.to_vec());
                }
                let noise = Normal::new(0.0, *sigma).expect("sigma validated");
                Ok(v.iter().map(|x| x + noise.sample(rng)).collect())
            }
            VectorChannel::QuantizeThenDmc { quantizer, per_symbol } => v
                .iter()
                .map(|&x| {
                    let received = per_symbol.transmit_symbol(quantizer.cell(x), rng)?;
                    Ok(quantizer.midpoint(received))
                })
                .collect(),
        }
    }
}

/// Declarative channel description used in configs and knowledge-base
/// manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscreteChannelSpec {
    Identity { size: usize },
    Bsc { p: f64 },
    Symmetric { size: usize, p: f64 },
    Uniform { size: usize },
    Matrix { rows: Vec<Vec<f64>> },
}

impl DiscreteChannelSpec {
    pub fn build(&self) -> Result<DiscreteChannel> {
        match self {
            DiscreteChannelSpec::Identity { size } => DiscreteChannel::identity(*size),
            DiscreteChannelSpec::Bsc { p } => DiscreteChannel::bsc(*p),
            DiscreteChannelSpec::Symmetric { size, p } => DiscreteChannel::symmetric(*size, *p),
            DiscreteChannelSpec::Uniform { size } => DiscreteChannel::uniform(*size),
            DiscreteChannelSpec::Matrix { rows } => DiscreteChannel::new(rows.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorChannelSpec {
    Clean {},
    AdditiveGaussian { sigma: f64 },
    /// `error_p` is the q-ary symmetric error probability over the levels.
    QuantizeThenDmc { levels: usize, error_p: f64 },
    QuantizeThenMatrix { levels: usize, rows: Vec<Vec<f64>> },
}

impl VectorChannelSpec {
    pub fn build(&self) -> Result<VectorChannel> {
        match self {
            VectorChannelSpec::Clean {} => Ok(VectorChannel::Clean),
            VectorChannelSpec::AdditiveGaussian { sigma } => VectorChannel::additive_gaussian(*sigma),
            VectorChannelSpec::QuantizeThenDmc { levels, error_p } => {
                VectorChannel::quantize_then_dmc(*levels, DiscreteChannel::symmetric(*levels, *error_p)?)
            }
            VectorChannelSpec::QuantizeThenMatrix { levels, rows } => {
                VectorChannel::quantize_then_dmc(*levels, DiscreteChannel::new(rows.clone())?)
            }
        }
    }
}

impl From<&VectorChannel> for VectorChannelSpec {
    fn from(ch: &VectorChannel) -> Self {
        match ch {
            VectorChannel::Clean => VectorChannelSpec::Clean {},
            VectorChannel::AdditiveGaussian { sigma } => VectorChannelSpec::AdditiveGaussian { sigma: *sigma },
            VectorChannel::QuantizeThenDmc { quantizer, per_symbol } => VectorChannelSpec::QuantizeThenMatrix {
                levels: quantizer.levels(),
                rows: per_symbol.matrix().to_vec(),
            },
        }
    }
}
