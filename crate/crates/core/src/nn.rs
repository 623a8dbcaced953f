//! Fixed-topology feed-forward networks with hand-written reverse mode,
//! a diagonal Gaussian policy head, Adam, and a versioned JSON checkpoint.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const HIDDEN: [usize; 2] = [64, 64];
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LOG_STD_INIT: f64 = -std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

/// Dense layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            let z = b + dot(row, x);
            match self.activation {
                Activation::Tanh => z.tanh(),
                Activation::Linear => z,
            }
        }));
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multi-layer perceptron: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    #[serde(skip)]
    version: u64,
}

/// Intermediate activations of one forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("nonempty cache")
    }
}

impl Mlp {
    /// Orthogonal initialization; `dims = [input, hidden.., output]`.
    pub fn new(dims: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let last = k + 1 == n;
                let gain = if last { output_gain } else { hidden_gain };
                let activation = if last { Activation::Linear } else { Activation::Tanh };
                Layer {
                    in_dim: dims[k],
                    out_dim: dims[k + 1],
                    weights: orthogonal(dims[k + 1], dims[k], gain, rng),
                    bias: vec![0.0; dims[k + 1]],
                    activation,
                }
            })
            .collect();
        Self { layers, version: 0 }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { Activation::Linear } else { Activation::Tanh };
                Layer::zeros(dims[k], dims[k + 1], act)
            })
            .collect();
        Self { layers, version: 0 }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("MLP without layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidConfig(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && layers[k - 1].out_dim != l.in_dim {
                return Err(Error::DimensionMismatch {
                    expected: layers[k - 1].out_dim,
                    actual: l.in_dim,
                });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} parameters")));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access invalidates every outstanding [`ForwardCache`].
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let (nw, nb) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&flat[off..off + nw]);
            l.bias.copy_from_slice(&flat[off + nw..off + nw + nb]);
            off += nw + nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for l in &self.layers {
            let mut out = Vec::with_capacity(l.out_dim);
            l.forward(activations.last().expect("nonempty"), &mut out);
            activations.push(out);
        }
        let cache = ForwardCache {
            version: self.version,
            activations,
        };
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Gradients of `<output_grad, output>` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<MlpGrads> {
        let mut g = MlpGrads::zeros_like(self);
        self.backward_into(cache, output_grad, &mut g)?;
        Ok(g)
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<()> {
        if cache.version != self.version || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let mut delta = output_grad.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let y = &cache.activations[k + 1];
            if l.activation == Activation::Tanh {
                for (d, yi) in delta.iter_mut().zip(y) {
                    *d *= 1.0 - yi * yi;
                }
            }
            let x = &cache.activations[k];
            let lg = &mut grads.layers[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                lg.bias[o] += d;
                let row = &mut lg.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += d * xi;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; l.in_dim];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    // Orthonormalize min(rows, cols) Gaussian vectors of length max(rows, cols).
    let (k, n) = (rows.min(cols), rows.max(cols));
    let mut vecs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..k {
        for j in 0..i {
            let (head, tail) = vecs.split_at_mut(i);
            let proj = dot(&tail[0], &head[j]);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= proj * b;
            }
        }
        let norm = dot(&vecs[i], &vecs[i]).sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|v| *v /= norm);
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // rows >= cols: vectors are columns; otherwise they are rows.
            w[r * cols + c] = gain * if rows >= cols { vecs[c][r] } else { vecs[r][c] };
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient accumulator with the same shape as an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= c);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .all(|v| v.is_finite())
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Draws `mean + exp(log_std) * z` and returns it with its log-density.
pub fn gaussian_sample(mean: &[f64], log_std: &[f64], rng: &mut Rng) -> (Vec<f64>, f64) {
    let mut logp = 0.0;
    let action = mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let z: f64 = StandardNormal.sample(rng);
            logp += -0.5 * z * z - ls - HALF_LN_2PI;
            m + ls.exp() * z
        })
        .collect();
    (action, logp)
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Gradients of the log-density with respect to the mean and log-std.
pub fn gaussian_log_prob_grads(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dmean = Vec::with_capacity(mean.len());
    let mut dlog_std = Vec::with_capacity(mean.len());
    for ((m, ls), a) in mean.iter().zip(log_std).zip(action) {
        let inv_var = (-2.0 * ls).exp();
        let diff = a - m;
        dmean.push(diff * inv_var);
        dlog_std.push(diff * diff * inv_var - 1.0);
    }
    (dmean, dlog_std)
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

/// Diagonal Gaussian policy: an MLP produces the mean, a state-independent
/// vector holds the log standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(input_dim: usize, action_dim: usize, rng: &mut Rng) -> Self {
        let dims = [input_dim, HIDDEN[0], HIDDEN[1], action_dim];
        Self {
            net: Mlp::new(&dims, 1.0, 0.01, rng),
            log_std: vec![LOG_STD_INIT; action_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.predict(obs)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(obs)?;
        Ok(gaussian_sample(&mean, &self.log_std, rng))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean(obs)?;
        Ok(gaussian_log_prob(&mean, &self.log_std, action))
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_std.len()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update over parameter segments laid out consecutively in the
    /// optimizer's moment buffers.
    pub fn step_segments(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        let total: usize = params.iter().map(|p| p.len()).sum();
        assert_eq!(total, self.m.len(), "optimizer/parameter size mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            assert_eq!(p.len(), g.len());
            for (i, (pi, gi)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[off + i];
                let v = &mut self.v[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            off += p.len();
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step_segments(&mut [params], &[grads], lr);
    }

    /// Updates an MLP (and optionally an extra trailing segment such as a log-std vector).
    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads, extra: Option<(&mut [f64], &[f64])>, lr: f64) {
        let mut params: Vec<&mut [f64]> = Vec::new();
        let mut gs: Vec<&[f64]> = Vec::new();
        for (l, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
            params.push(&mut l.weights);
            params.push(&mut l.bias);
            gs.push(&g.weights);
            gs.push(&g.bias);
        }
        if let Some((p, g)) = extra {
            params.push(p);
            gs.push(g);
        }
        self.step_segments(&mut params, &gs, lr);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// On-disk network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn from_mlp(net: &Mlp, optimizer: Option<&Adam>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            dims: net.dims(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    activation: l.activation,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            log_std: None,
            optimizer: optimizer.cloned(),
        }
    }

    pub fn from_policy(policy: &GaussianPolicy, optimizer: Option<&Adam>) -> Self {
        Self {
            log_std: Some(policy.log_std.clone()),
            ..Self::from_mlp(&policy.net, optimizer)
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if self.dims.len() != self.layers.len() + 1 {
            return Err(Error::InvalidConfig("checkpoint dims/layers disagree".into()));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, r)| Layer {
                in_dim: self.dims[k],
                out_dim: self.dims[k + 1],
                weights: r.weights.clone(),
                bias: r.bias.clone(),
                activation: r.activation,
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn to_policy(&self) -> Result<GaussianPolicy> {
        let net = self.to_mlp()?;
        let log_std = self
            .log_std
            .clone()
            .ok_or_else(|| Error::InvalidConfig("checkpoint has no log_std".into()))?;
        if log_std.len() != net.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim(),
                actual: log_std.len(),
            });
        }
        Ok(GaussianPolicy { net, log_std })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidConfig("checkpoint lacks format_version".into()))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::FormatVersion {
                found: found as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}
