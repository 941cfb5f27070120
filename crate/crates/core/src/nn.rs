//! Dense feed-forward networks with exact reverse-mode gradients, plus the
//! Adam optimizer and a JSON checkpoint format.
//!
//! All parameters of a network live in one flat `Vec<f64>`; layer `k` stores
//! its `out x in` weight matrix row-major followed by its bias. Gradient
//! buffers and optimizer moments use the same flat layout.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT: &str = "finx-dense/1";

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("activation tape does not belong to this network")]
    TapeMismatch,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    /// Dropout rate on hidden-layer outputs, active only in `forward_train`.
    dropout: f64,
}

/// Forward-pass record needed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    param_count: usize,
    /// Input seen by each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers applied to each layer's output.
    masks: Vec<Option<Vec<f64>>>,
}

/// Gradients in the network's flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub grads: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            grads: vec![0.0; net.param_count()],
        }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}

impl DenseNet {
    /// Xavier-uniform weights, zero biases. `sizes` lists every layer width
    /// from input to output.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(NnError::InvalidArchitecture(format!("layer sizes {sizes:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::InvalidArchitecture(format!("dropout {dropout}")));
        }
        let last = sizes.len() - 2;
        let layers: Vec<LayerShape> = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerShape {
                input: w[0],
                output: w[1],
                activation: if k == last { output } else { hidden },
            })
            .collect();
        let mut net = Self::zeros(layers, dropout)?;
        for k in 0..net.layers.len() {
            let shape = net.layers[k];
            let limit = (6.0 / (shape.input + shape.output) as f64).sqrt();
            let off = net.offsets[k];
            for w in &mut net.params[off..off + shape.input * shape.output] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    /// Network with the given layer shapes and all parameters zero.
    pub fn zeros(layers: Vec<LayerShape>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::InvalidArchitecture("no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].output != w[1].input {
                return Err(NnError::InvalidArchitecture(format!(
                    "layer output {} feeds input {}",
                    w[0].output, w[1].input
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
            dropout,
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// Mutable weight matrix (row-major `out x in`) and bias of layer `k`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.layers[k];
        let off = self.offsets[k];
        let (w, rest) = self.params[off..off + shape.param_count()].split_at_mut(shape.input * shape.output);
        (w, rest)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn affine(&self, k: usize, input: &[f64], out: &mut Vec<f64>) {
        let shape = self.layers[k];
        let off = self.offsets[k];
        let w = &self.params[off..off + shape.input * shape.output];
        let b = &self.params[off + shape.input * shape.output..off + shape.param_count()];
        out.clear();
        out.extend(w.chunks_exact(shape.input).zip(b).map(|(row, bias)| {
            row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + bias
        }));
    }

    /// Inference pass without a tape and without dropout.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut pre = Vec::new();
        for (k, shape) in self.layers.iter().enumerate() {
            self.affine(k, &x, &mut pre);
            x.clear();
            x.extend(pre.iter().map(|&z| shape.activation.apply(z)));
        }
        Ok(x)
    }

    /// Deterministic forward pass recording the tape.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.forward_impl(input, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Forward pass with dropout on hidden layers (no-op when the rate is 0).
    pub fn forward_train(&self, input: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, Tape)> {
        self.forward_impl(input, Some(rng))
    }

    fn forward_impl<R: Rng>(&self, input: &[f64], mut rng: Option<&mut R>) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut tape = Tape {
            param_count: self.param_count(),
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut x = input.to_vec();
        for (k, shape) in self.layers.iter().enumerate() {
            let mut pre = Vec::with_capacity(shape.output);
            self.affine(k, &x, &mut pre);
            let mut out: Vec<f64> = pre.iter().map(|&z| shape.activation.apply(z)).collect();
            let mut mask = None;
            if k + 1 < n && self.dropout > 0.0 {
                if let Some(rng) = rng.as_deref_mut() {
                    let keep = 1.0 - self.dropout;
                    let m: Vec<f64> = (0..shape.output)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    out.iter_mut().zip(&m).for_each(|(o, s)| *o *= s);
                    mask = Some(m);
                }
            }
            tape.inputs.push(std::mem::replace(&mut x, out));
            tape.pre.push(pre);
            tape.masks.push(mask);
        }
        Ok((x, tape))
    }

    /// Gradients of `output . output_grad` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<GradBuffer> {
        let mut grads = GradBuffer::zeros_like(self);
        self.backward_into(tape, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward_into(&self, tape: &Tape, output_grad: &[f64], grads: &mut GradBuffer) -> Result<Vec<f64>> {
        if tape.param_count != self.param_count() || tape.pre.len() != self.layers.len() {
            return Err(NnError::TapeMismatch);
        }
        if grads.grads.len() != self.param_count() {
            return Err(NnError::DimensionMismatch {
                expected: self.param_count(),
                got: grads.grads.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let mut delta = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let shape = self.layers[k];
            if let Some(mask) = &tape.masks[k] {
                delta.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            let pre = &tape.pre[k];
            if pre.len() != shape.output || tape.inputs[k].len() != shape.input {
                return Err(NnError::TapeMismatch);
            }
            for (d, &z) in delta.iter_mut().zip(pre) {
                *d *= shape.activation.derivative(z);
            }
            let off = self.offsets[k];
            let nw = shape.input * shape.output;
            let input = &tape.inputs[k];
            {
                let (gw, gb) = grads.grads[off..off + shape.param_count()].split_at_mut(nw);
                for ((row, &d), b) in gw.chunks_exact_mut(shape.input).zip(&delta).zip(gb.iter_mut()) {
                    *b += d;
                    if d != 0.0 {
                        row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                    }
                }
            }
            let w = &self.params[off..off + nw];
            let mut prev = vec![0.0; shape.input];
            for (row, &d) in w.chunks_exact(shape.input).zip(&delta) {
                if d != 0.0 {
                    prev.iter_mut().zip(row).for_each(|(p, a)| *p += d * a);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// One Adam step on all parameters.
    pub fn adam_step(&mut self, grads: &GradBuffer, state: &mut AdamState) -> Result<()> {
        adam_step(&mut self.params, &grads.grads, state)
    }

    pub fn copy_params_from(&mut self, other: &DenseNet) -> Result<()> {
        if self.layers != other.layers {
            return Err(NnError::ShapeMismatch("layer shapes differ".into()));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dropout: self.dropout,
            layers: self
                .layers
                .iter()
                .zip(&self.offsets)
                .map(|(shape, &off)| {
                    let nw = shape.input * shape.output;
                    LayerCheckpoint {
                        input: shape.input,
                        output: shape.output,
                        activation: shape.activation,
                        weights: self.params[off..off + nw].to_vec(),
                        bias: self.params[off + nw..off + shape.param_count()].to_vec(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NnError::ShapeMismatch(format!("unknown format {:?}", ckpt.format)));
        }
        let shapes = ckpt
            .layers
            .iter()
            .map(|l| LayerShape {
                input: l.input,
                output: l.output,
                activation: l.activation,
            })
            .collect();
        let mut net = Self::zeros(shapes, ckpt.dropout).map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
        for (k, l) in ckpt.layers.iter().enumerate() {
            if l.weights.len() != l.input * l.output || l.bias.len() != l.output {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {k}: {} weights and {} biases for a {}x{} layer",
                    l.weights.len(),
                    l.bias.len(),
                    l.output,
                    l.input
                )));
            }
            let (w, b) = net.layer_mut(k);
            w.copy_from_slice(&l.weights);
            b.copy_from_slice(&l.bias);
        }
        Ok(net)
    }

    /// Replaces the parameters with a checkpoint of exactly the same shape.
    pub fn load_checkpoint(&mut self, ckpt: &NetCheckpoint) -> Result<()> {
        let other = Self::from_checkpoint(ckpt)?;
        if other.layers != self.layers {
            return Err(NnError::ShapeMismatch(format!(
                "checkpoint layers {:?} do not match network layers {:?}",
                other.layers, self.layers
            )));
        }
        self.params = other.params;
        Ok(())
    }
}

/// Serialized network: layer shapes plus row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub dropout: f64,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn for_net(net: &DenseNet, lr: f64) -> Self {
        Self::new(net.param_count(), lr)
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::DimensionMismatch {
            expected: params.len(),
            got: grads.len().min(state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_linear(n: usize) -> DenseNet {
        let mut net = DenseNet::zeros(
            vec![LayerShape {
                input: n,
                output: n,
                activation: Activation::Linear,
            }],
            0.0,
        )
        .unwrap();
        let (w, _) = net.layer_mut(0);
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single_linear(3);
        let (out, _) = net.forward(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 3.5]);
        assert_eq!(net.predict(&[1.0, -2.0, 3.5]).unwrap(), out);
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let mut net = DenseNet::zeros(
            vec![LayerShape {
                input: 2,
                output: 2,
                activation: Activation::Relu,
            }],
            0.0,
        )
        .unwrap();
        net.layer_mut(0).0.copy_from_slice(&[-1.0, 0.0, 0.0, -1.0]);
        assert_eq!(net.predict(&[2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    /// Matrix-product oracle for a two-layer tanh -> linear net.
    #[test]
    fn two_layer_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[4, 5, 3], Activation::Tanh, Activation::Linear, 0.0, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1, 0.05];
        let ck = net.to_checkpoint();
        let (l0, l1) = (&ck.layers[0], &ck.layers[1]);
        let mut h = [0.0; 5];
        for i in 0..5 {
            let mut s = l0.bias[i];
            for j in 0..4 {
                s += l0.weights[i * 4 + j] * x[j];
            }
            h[i] = s.tanh();
        }
        let mut y = [0.0; 3];
        for i in 0..3 {
            let mut s = l1.bias[i];
            for j in 0..5 {
                s += l1.weights[i * 5 + j] * h[j];
            }
            y[i] = s;
        }
        let (out, _) = net.forward(&x).unwrap();
        for (a, b) in out.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = single_linear(3);
        assert_eq!(
            net.forward(&[1.0]).unwrap_err(),
            NnError::DimensionMismatch { expected: 3, got: 1 }
        );
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::new(&[3, 2], Activation::Linear, Activation::Linear, 0.0, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = [0.25, -3.0];
        let (_, tape) = net.forward(&x).unwrap();
        let grads = net.backward(&tape, &g).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(grads.grads[i * 3 + j], g[i] * x[j]);
            }
            assert_eq!(grads.grads[6 + i], g[i]);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::new(&[4, 8, 3], Activation::Sigmoid, Activation::Linear, 0.0, &mut rng).unwrap();
        let (_, tape) = net.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let grads = net.backward(&tape, &[0.0; 3]).unwrap();
        assert!(grads.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tape_from_other_network_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Linear, 0.0, &mut rng).unwrap();
        let b = DenseNet::new(&[2, 4, 1], Activation::Tanh, Activation::Linear, 0.0, &mut rng).unwrap();
        let (_, tape) = a.forward(&[0.1, 0.2]).unwrap();
        assert_eq!(b.backward(&tape, &[1.0]).unwrap_err(), NnError::TapeMismatch);
    }

    fn loss(net: &DenseNet, x: &[f64], g: &[f64]) -> f64 {
        net.predict(x).unwrap().iter().zip(g).map(|(o, w)| o * w).sum()
    }

    #[test]
    fn three_layer_tanh_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = DenseNet::new(&[5, 7, 6, 3], Activation::Tanh, Activation::Linear, 0.0, &mut rng).unwrap();
        let x = [0.2, -0.4, 0.9, -1.3, 0.6];
        let g = [0.7, -1.1, 0.4];
        let (_, tape) = net.forward(&x).unwrap();
        let analytic = net.backward(&tape, &g).unwrap();
        let h = 1e-5;
        for k in 0..net.param_count() {
            let orig = net.params[k];
            net.params[k] = orig + h;
            let up = loss(&net, &x, &g);
            net.params[k] = orig - h;
            let down = loss(&net, &x, &g);
            net.params[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.grads[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            assert!(rel < 1e-4, "param {k}: {a} vs {numeric}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = DenseNet::new(&[3, 4, 2], Activation::Sigmoid, Activation::Linear, 0.0, &mut rng).unwrap();
        let x = [0.3, 0.1, -0.8];
        let g = [1.0, -0.5];
        let (_, tape) = net.forward(&x).unwrap();
        let mut buf = GradBuffer::zeros_like(&net);
        let dx = net.backward_into(&tape, &g, &mut buf).unwrap();
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-5;
            xm[i] -= 1e-5;
            let num = (loss(&net, &xp, &g) - loss(&net, &xm, &g)) / 2e-5;
            assert!((dx[i] - num).abs() < 1e-8);
        }
    }

    #[test]
    fn dropout_is_inactive_in_deterministic_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 16, 2], Activation::Relu, Activation::Linear, 0.5, &mut rng).unwrap();
        let x = [1.0, 2.0, 3.0];
        let (a, _) = net.forward(&x).unwrap();
        assert_eq!(a, net.predict(&x).unwrap());
        let (b, tape) = net.forward_train(&x, &mut rng).unwrap();
        assert!(tape.masks[0].is_some());
        assert_ne!(a, b);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[2.0; 4]);
        assert!(s.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let a = softmax(&[0.3, -1.2, 2.5]);
        let b = softmax(&[100.3, 98.8, 102.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // e^0 / (1 + 3), e^{ln 3} / (1 + 3)
        let c = softmax(&[0.0, 3f64.ln()]);
        assert!((c[0] - 0.25).abs() < 1e-15);
        assert!((c[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2, 0.01);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after one step, so the move is lr * g / (|g| + eps)
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2, 1e-3);
        adam_step(&mut p, &[0.5, -4.0], &mut st).unwrap();
        assert!((p[0] + 1e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 1e-3 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let target = [3.0, -1.5, 0.25];
        let scales = [1.0, 10.0, 0.1];
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3, 0.05);
        let mut converged_at = None;
        for it in 0..5000 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * scales[i] * (p[i] - target[i])).collect();
            adam_step(&mut p, &g, &mut st).unwrap();
            st.lr = 0.05 * (1.0 - it as f64 / 5000.0).max(1e-3);
            if p.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-6) {
                converged_at.get_or_insert(it);
            }
        }
        assert!(converged_at.is_some(), "{p:?}");
        assert!(p.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-6), "{p:?}");
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = vec![0.0; 2];
        assert!(adam_step(&mut p, &[0.0; 3], &mut st).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_shape_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Linear, 0.1, &mut rng).unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back: NetCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(DenseNet::from_checkpoint(&back).unwrap(), net);

        let mut other = DenseNet::new(&[3, 5, 2], Activation::Relu, Activation::Linear, 0.1, &mut rng).unwrap();
        assert!(matches!(other.load_checkpoint(&back), Err(NnError::ShapeMismatch(_))));
        let mut truncated = back.clone();
        truncated.layers[0].weights.pop();
        assert!(DenseNet::from_checkpoint(&truncated).is_err());
    }

    #[test]
    fn same_seed_same_initialization() {
        let a = DenseNet::new(&[6, 8, 3], Activation::Tanh, Activation::Linear, 0.0, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = DenseNet::new(&[6, 8, 3], Activation::Tanh, Activation::Linear, 0.0, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a.params(), b.params());
    }

    proptest! {
        #[test]
        fn softmax_on_simplex(logits in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let s = softmax(&logits);
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&p| p > 0.0));
        }
    }
}
