//! Dense multilayer perceptrons with exact reverse-mode gradients and Adam.
//!
//! Weights are stored row-major as `output_dim x input_dim` so that both the
//! forward mat-vec and the backward transpose-products walk memory
//! contiguously. Everything is `f64`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {layer}: input dimension {got} does not match expected {expected}")]
    DimensionMismatch { layer: usize, expected: usize, got: usize },
    #[error("gradient shape does not match parameters")]
    ShapeMismatch,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("checkpoint version {found} unsupported (expected {CHECKPOINT_VERSION})")]
    CheckpointVersion { found: u32 },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y = f(z)`.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

/// `input -> hidden... -> output` with one activation for hidden layers and
/// one for the output layer.
pub fn layer_stack(
    input_dim: usize,
    hidden: &[usize],
    hidden_activation: Activation,
    output_dim: usize,
    output_activation: Activation,
) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec { input_dim: prev, output_dim: h, activation: hidden_activation });
        prev = h;
    }
    specs.push(LayerSpec { input_dim: prev, output_dim, activation: output_activation });
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    #[serde(flatten)]
    pub spec: LayerSpec,
    /// Row-major `output_dim x input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    #[inline]
    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        let n_in = self.spec.input_dim;
        out.clear();
        out.extend(self.weights.chunks_exact(n_in).zip(&self.bias).map(|(row, b)| {
            let z = row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x);
            self.spec.activation.apply(z)
        }));
    }
}

/// Multilayer perceptron parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer activations from a forward pass: `activations[0]` is the input,
/// `activations[k + 1]` the output of layer `k`.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }

    /// Flattened view in parameter order (layer by layer, weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }
}

impl Mlp {
    /// Fan-in scaled uniform init: weights ~ U(-b, b) with `b = sqrt(6 / fan_in)`
    /// (variance `2 / fan_in`), biases zero.
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for (i, pair) in specs.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(NnError::DimensionMismatch {
                    layer: i + 1,
                    expected: pair[0].output_dim,
                    got: pair[1].input_dim,
                });
            }
        }
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = (6.0 / spec.input_dim as f64).sqrt();
                let weights =
                    (0..spec.input_dim * spec.output_dim).map(|_| rng.random_range(-bound..bound)).collect();
                Dense { spec, weights, bias: vec![0.0; spec.output_dim] }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.spec.input_dim * l.spec.output_dim || l.bias.len() != l.spec.output_dim {
                return Err(NnError::ShapeMismatch);
            }
            if i > 0 && layers[i - 1].spec.output_dim != l.spec.input_dim {
                return Err(NnError::DimensionMismatch {
                    layer: i,
                    expected: layers[i - 1].spec.output_dim,
                    got: l.spec.input_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch { layer: 0, expected: self.input_dim(), got: input.len() });
        }
        Ok(())
    }

    /// Forward pass keeping every activation for [`Mlp::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        let mut cache = ForwardCache::default();
        self.forward_with(input, &mut cache)?;
        Ok(cache)
    }

    /// Like [`Mlp::forward`] but reuses the buffers of an existing cache.
    pub fn forward_with(&self, input: &[f64], cache: &mut ForwardCache) -> Result<(), NnError> {
        self.check_input(input)?;
        cache.activations.resize_with(self.layers.len() + 1, Vec::new);
        cache.activations[0].clear();
        cache.activations[0].extend_from_slice(input);
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.activations.split_at_mut(k + 1);
            layer.forward_into(&done[k], &mut rest[0]);
        }
        Ok(())
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients, NnError> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates `d<output_grad, output>/d params` into `grads` and returns
    /// the gradient with respect to the input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        if cache.activations.len() != self.layers.len() + 1
            || output_grad.len() != self.output_dim()
            || grads.layers.len() != self.layers.len()
        {
            return Err(NnError::ShapeMismatch);
        }
        let mut delta: Vec<f64> = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let n_in = layer.spec.input_dim;
            let out = &cache.activations[k + 1];
            let input = &cache.activations[k];
            if out.len() != layer.spec.output_dim || input.len() != n_in {
                return Err(NnError::ShapeMismatch);
            }
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= layer.spec.activation.derivative_at_output(y);
            }
            let g = &mut grads.layers[k];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                let grow = &mut g.weights[o * n_in..(o + 1) * n_in];
                for ((gw, &x), (p, &w)) in grow.iter_mut().zip(input).zip(prev.iter_mut().zip(row)) {
                    *gw += d * x;
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    /// Flattened parameters in the same order as [`Gradients::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    /// Mutable access to the `index`-th flattened parameter.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for s in self.param_slices_mut() {
            if index < s.len() {
                return Some(&mut s[index]);
            }
            index -= s.len();
        }
        None
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { version: CHECKPOINT_VERSION, layers: self.layers.clone() }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self, NnError> {
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(NnError::CheckpointVersion { found: checkpoint.version });
        }
        Self::from_layers(checkpoint.layers)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        fs::write(path, serde_json::to_vec(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_checkpoint(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Versioned JSON checkpoint: layer shapes plus flat weight arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected Adam update of `params` at (1-based) step `t`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], t: u64, cfg: &AdamConfig) {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let step = cfg.lr / bc1;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + cfg.eps);
        }
    }
}

/// Adam optimizer state for one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<AdamMoments>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let moments = net
            .layers
            .iter()
            .flat_map(|l| [AdamMoments::zeros(l.weights.len()), AdamMoments::zeros(l.bias.len())])
            .collect();
        Self { config, step: 0, moments }
    }
}

/// Applies one Adam step. Gradients are validated before any parameter is
/// touched, so an error leaves both `params` and `state` unchanged.
pub fn adam_step(params: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<(), NnError> {
    if grads.layers.len() != params.layers.len() || state.moments.len() != 2 * params.layers.len() {
        return Err(NnError::ShapeMismatch);
    }
    for (k, (g, l)) in grads.layers.iter().zip(&params.layers).enumerate() {
        if g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len() {
            return Err(NnError::ShapeMismatch);
        }
        if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { layer: k });
        }
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    for ((p, g), m) in params.param_slices_mut().zip(grads.slices()).zip(&mut state.moments) {
        m.update(p, g, t, &cfg);
    }
    Ok(())
}
