//! Dense feedforward networks.
//!
//! Every learned object in the crate (encoders, generators, actors, critics,
//! linear probes) is a [`DenseNet`]: a stack of fully connected layers, each
//! `y = activation(W x + b)` with `W` stored row-major as `out × in`.
//!
//! Training is plain SGD on exact analytic gradients. Each layer carries a
//! freeze flag per parameter tensor (weights, bias); frozen tensors still
//! receive gradients but [`DenseNet::sgd_step`] never touches them.
//!
//! Networks serialize to a small binary format:
//!
//! ```text
//! "SMNN" | version u16 | layer count u16 | per layer: in u32, out u32, activation u8
//!        | parameters as f64, layer order, weights row-major then bias
//! ```
//!
//! All integers and floats are little-endian. Freeze flags are training state,
//! not parameters, and are not serialized.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SMNN";
pub const FORMAT_VERSION: u16 = 1;
/// Bytes before the first layer descriptor.
pub const HEADER_FIXED_LEN: usize = 8;
/// Bytes per layer descriptor.
pub const LAYER_DESCRIPTOR_LEN: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: non-finite gradient")]
    Divergence { step: u64 },
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Affine,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Affine,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softmax,
    ];

    pub fn code(self) -> u8 {
        match self {
            Activation::Affine => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::Softmax => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn apply_in_place(self, z: &mut [f64]) {
        match self {
            Activation::Affine => {}
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                z.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }

    /// Maps a gradient w.r.t. the activation output `y` to a gradient w.r.t.
    /// the pre-activation. Every supported activation's derivative is
    /// expressible through its output alone.
    fn pullback(self, y: &[f64], grad_y: &[f64]) -> Vec<f64> {
        match self {
            Activation::Affine => grad_y.to_vec(),
            Activation::Relu => y
                .iter()
                .zip(grad_y)
                .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Tanh => y.iter().zip(grad_y).map(|(&y, &g)| g * (1.0 - y * y)).collect(),
            Activation::Sigmoid => y.iter().zip(grad_y).map(|(&y, &g)| g * y * (1.0 - y)).collect(),
            Activation::Softmax => {
                let dot: f64 = y.iter().zip(grad_y).map(|(y, g)| y * g).sum();
                y.iter().zip(grad_y).map(|(&y, &g)| y * (g - dot)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over output coordinates of the squared error.
    Mse,
    /// `-sum t log y`; only defined on a softmax output layer.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
    freeze_weights: bool,
    freeze_bias: bool,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::Config("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(NnError::DimensionMismatch {
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(NnError::DimensionMismatch {
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
            freeze_weights: false,
            freeze_bias: false,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self::new(in_dim, out_dim, activation, weights, vec![0.0; out_dim])
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_weights_frozen(&self) -> bool {
        self.freeze_weights
    }

    pub fn is_bias_frozen(&self) -> bool {
        self.freeze_bias
    }

    pub fn set_frozen(&mut self, weights: bool, bias: bool) {
        self.freeze_weights = weights;
        self.freeze_bias = bias;
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Activations of every layer for one input: `values[0]` is the input,
/// `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    values: Vec<Vec<f64>>,
}

impl ActivationTrace {
    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace always holds the input")
    }

    /// Output of layer `i`.
    pub fn layer(&self, i: usize) -> &[f64] {
        &self.values[i + 1]
    }

    pub fn all(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.values.pop().expect("trace always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-parameter gradients shaped exactly like the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerGrad] {
        &mut self.layers
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(&mut f);
            l.bias.iter_mut().for_each(&mut f);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|g| *g *= factor);
    }

    /// `self += other`. Panics if shapes differ.
    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len(), "gradient shape mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            assert_eq!(a.weights.len(), b.weights.len(), "gradient shape mismatch");
            assert_eq!(a.bias.len(), b.bias.len(), "gradient shape mismatch");
            a.weights.iter_mut().zip(&b.weights).for_each(|(a, b)| *a += b);
            a.bias.iter_mut().zip(&b.bias).for_each(|(a, b)| *a += b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|g| g.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

/// Result of backpropagating an output gradient.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: Gradients,
    /// Gradient of the loss w.r.t. the network input.
    pub input_grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    steps: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        Ok(Self { layers, steps: 0 })
    }

    /// Randomly initialized network with the given `(out_dim, activation)`
    /// layers stacked on an `input_dim`-sized input.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        spec: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut in_dim = input_dim;
        for &(out_dim, act) in spec {
            layers.push(Layer::random(in_dim, out_dim, act, rng)?);
            in_dim = out_dim;
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// `[input, hidden..., output]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Number of SGD steps applied since construction or deserialization.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn freeze_all(&mut self) {
        self.layers.iter_mut().for_each(|l| l.set_frozen(true, true));
    }

    pub fn unfreeze_all(&mut self) {
        self.layers.iter_mut().for_each(|l| l.set_frozen(false, false));
    }

    /// Freezes every layer except the last `n`.
    pub fn freeze_all_but_last(&mut self, n: usize) {
        let cut = self.layers.len().saturating_sub(n);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let frozen = i < cut;
            l.set_frozen(frozen, frozen);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<ActivationTrace> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let mut z = layer.affine(values.last().unwrap());
            layer.activation.apply_in_place(&mut z);
            values.push(z);
        }
        Ok(ActivationTrace { values })
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(ActivationTrace::into_output)
    }

    /// Loss value and its gradient w.r.t. the network output.
    pub fn loss(&self, output: &[f64], loss: LossKind, target: &[f64]) -> Result<(f64, Vec<f64>)> {
        if target.len() != output.len() {
            return Err(NnError::DimensionMismatch {
                expected: output.len(),
                got: target.len(),
            });
        }
        match loss {
            LossKind::Mse => {
                let n = output.len() as f64;
                let value = output
                    .iter()
                    .zip(target)
                    .map(|(y, t)| (y - t) * (y - t))
                    .sum::<f64>()
                    / n;
                let grad = output.iter().zip(target).map(|(y, t)| 2.0 * (y - t) / n).collect();
                Ok((value, grad))
            }
            LossKind::CrossEntropy => {
                if self.layers.last().map(|l| l.activation) != Some(Activation::Softmax) {
                    return Err(NnError::Config(
                        "cross-entropy loss requires a softmax output layer".into(),
                    ));
                }
                let value = -output
                    .iter()
                    .zip(target)
                    .filter(|(_, &t)| t != 0.0)
                    .map(|(y, t)| t * y.max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>();
                // Reported as d/dy; the softmax pullback turns it into y*sum(t) - t.
                let grad = output
                    .iter()
                    .zip(target)
                    .map(|(y, t)| if *t == 0.0 { 0.0 } else { -t / y.max(f64::MIN_POSITIVE) })
                    .collect();
                Ok((value, grad))
            }
        }
    }

    pub fn backward(
        &self,
        trace: &ActivationTrace,
        loss: LossKind,
        target: &[f64],
    ) -> Result<(f64, Gradients)> {
        let (value, grad_out) = self.loss(trace.output(), loss, target)?;
        let bp = if loss == LossKind::CrossEntropy {
            // Closed form for softmax + cross-entropy; avoids dividing by tiny outputs.
            let y = trace.output();
            let t_sum: f64 = target.iter().sum();
            let dz: Vec<f64> = y.iter().zip(target).map(|(y, t)| y * t_sum - t).collect();
            self.backward_from_preactivation(trace, dz)?
        } else {
            self.backward_from_output(trace, &grad_out)?
        };
        Ok((value, bp.grads))
    }

    /// Backpropagates an arbitrary gradient w.r.t. the network output.
    pub fn backward_from_output(&self, trace: &ActivationTrace, grad_out: &[f64]) -> Result<Backprop> {
        self.check_trace(trace)?;
        if grad_out.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: grad_out.len(),
            });
        }
        let last = self.layers.last().unwrap();
        let dz = last.activation.pullback(trace.output(), grad_out);
        self.backward_from_preactivation(trace, dz)
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.values.len() != self.layers.len() + 1 {
            return Err(NnError::DimensionMismatch {
                expected: self.layers.len() + 1,
                got: trace.values.len(),
            });
        }
        Ok(())
    }

    /// `dz` is the gradient w.r.t. the last layer's pre-activation.
    fn backward_from_preactivation(&self, trace: &ActivationTrace, mut dz: Vec<f64>) -> Result<Backprop> {
        self.check_trace(trace)?;
        let mut grads = Gradients::zeros_like(self);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.values[i];
            let g = &mut grads.layers[i];
            for (o, &d) in dz.iter().enumerate() {
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(x).for_each(|(gw, xi)| *gw = d * xi);
                g.bias[o] = d;
            }
            let mut dx = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&dz) {
                dx.iter_mut().zip(row).for_each(|(dx, w)| *dx += w * d);
            }
            if i == 0 {
                return Ok(Backprop { grads, input_grad: dx });
            }
            dz = self.layers[i - 1].activation.pullback(&trace.values[i], &dx);
        }
        unreachable!("network has at least one layer")
    }

    /// In-place SGD update of every unfrozen parameter tensor.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len())
        {
            return Err(NnError::Config("gradient shape does not match network".into()));
        }
        if !grads.is_finite() {
            return Err(NnError::Divergence { step: self.steps });
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if !layer.freeze_weights {
                layer.weights.iter_mut().zip(&g.weights).for_each(|(w, g)| *w -= lr * g);
            }
            if !layer.freeze_bias {
                layer.bias.iter_mut().zip(&g.bias).for_each(|(b, g)| *b -= lr * g);
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn sgd_step(&self, grads: &Gradients, lr: f64) -> Result<DenseNet> {
        let mut next = self.clone();
        next.apply_sgd(grads, lr)?;
        Ok(next)
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_FIXED_LEN + LAYER_DESCRIPTOR_LEN * self.layers.len() + 8 * self.param_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            out.push(l.activation.code());
        }
        for l in &self.layers {
            for p in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(NnError::Parse {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != FORMAT_VERSION {
            return Err(NnError::Parse {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let n_layers = u16::from_le_bytes(r.array("layer count")?) as usize;
        if n_layers == 0 {
            return Err(NnError::Parse {
                offset: 6,
                reason: "zero layers".into(),
            });
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let at = r.pos;
            let in_dim = u32::from_le_bytes(r.array("layer input size")?) as usize;
            let out_dim = u32::from_le_bytes(r.array("layer output size")?) as usize;
            let code = r.take(1, "activation")?[0];
            let act = Activation::from_code(code).ok_or_else(|| NnError::Parse {
                offset: at + 8,
                reason: format!("unknown activation code {code}"),
            })?;
            if in_dim == 0 || out_dim == 0 {
                return Err(NnError::Parse {
                    offset: at,
                    reason: "zero layer dimension".into(),
                });
            }
            shapes.push((in_dim, out_dim, act));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (in_dim, out_dim, act) in shapes {
            let at = r.pos;
            let weights = r.f64s(in_dim * out_dim)?;
            let bias = r.f64s(out_dim)?;
            layers.push(Layer::new(in_dim, out_dim, act, weights, bias).map_err(|e| NnError::Parse {
                offset: at,
                reason: e.to_string(),
            })?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Parse {
                offset: r.pos,
                reason: "trailing bytes".into(),
            });
        }
        Self::from_layers(layers).map_err(|e| NnError::Parse {
            offset: HEADER_FIXED_LEN,
            reason: e.to_string(),
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NnError::Parse {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            }),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, "parameters")?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
