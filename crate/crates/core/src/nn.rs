//! Dense feed-forward networks with analytic backprop and Adam.
//!
//! Weights are stored row-major (`fan_out × fan_in`). Layers skip zero
//! inputs, which keeps one-hot gridworld observations cheap without a
//! separate sparse code path in callers.

use rand::Rng as _;

use crate::codec::{Reader, Writer};
use crate::seed::{rng_from, Rng};
use crate::{Error, Result};

/// Floor applied to probabilities inside `ln`.
pub const LOG_CLAMP: f64 = 1e-12;
/// Sigmoid outputs are clamped to `[SIGMOID_CLAMP, 1 - SIGMOID_CLAMP]`.
pub const SIGMOID_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softmax,
            _ => return Err(Error::Checkpoint(format!("unknown activation code {code}"))),
        })
    }

    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for x in v.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for x in v.iter_mut() {
                    *x = (1.0 / (1.0 + (-*x).exp())).clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
                }
            }
            Activation::Softmax => softmax_in_place(v),
        }
    }

    /// Maps dL/d(output) to dL/d(pre-activation), given the layer output.
    fn backward(self, out: &[f64], grad_out: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => grad_out.to_vec(),
            Activation::Relu => out
                .iter()
                .zip(grad_out)
                .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Sigmoid => out
                .iter()
                .zip(grad_out)
                .map(|(&o, &g)| g * o * (1.0 - o))
                .collect(),
            Activation::Softmax => {
                let dot: f64 = out.iter().zip(grad_out).map(|(o, g)| o * g).sum();
                out.iter()
                    .zip(grad_out)
                    .map(|(&o, &g)| o * (g - dot))
                    .collect()
            }
        }
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out × fan_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        let nonzero: Vec<usize> = (0..self.fan_in).filter(|&i| x[i] != 0.0).collect();
        if nonzero.len() * 4 < self.fan_in {
            for (j, acc) in out.iter_mut().enumerate() {
                let row = &self.weights[j * self.fan_in..(j + 1) * self.fan_in];
                for &i in &nonzero {
                    *acc += row[i] * x[i];
                }
            }
        } else {
            for (j, acc) in out.iter_mut().enumerate() {
                let row = &self.weights[j * self.fan_in..(j + 1) * self.fan_in];
                for (w, xi) in row.iter().zip(x) {
                    *acc += w * xi;
                }
            }
        }
        self.activation.apply(&mut out);
        out
    }
}

/// Ordered dense layers. Also used as the container for gradients and Adam
/// moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<Layer>,
}

/// Per-layer activations from a forward pass: `activations[0]` is the input,
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input")
    }

    /// Output of layer `index`.
    pub fn layer_output(&self, index: usize) -> &[f64] {
        &self.activations[index + 1]
    }
}

impl NetParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        Self::init_with_rng(sizes, activations, &mut rng_from(seed))
    }

    pub fn init_with_rng(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Validation("a network needs at least two layer sizes".into()));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::Validation(format!(
                "{} activations for {} layers",
                activations.len(),
                sizes.len() - 1
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Validation("layer sizes must be positive".into()));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(dims, &act)| {
                let (fan_in, fan_out) = (dims[0], dims[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out, act);
                for w in &mut layer.weights {
                    *w = rng.gen_range(-scale..scale);
                }
                layer
            })
            .collect();
        let net = NetParams { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(Error::Validation(format!("layer {i} storage does not match its shape")));
            }
            if i > 0 && self.layers[i - 1].fan_out != l.fan_in {
                return Err(Error::Validation(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.fan_in,
                    i - 1,
                    self.layers[i - 1].fan_out
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Validation(format!("softmax on hidden layer {i}")));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in, l.fan_out, l.activation))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().map_or(Activation::Identity, |l| l.activation)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    /// Stacks `other` after `self`.
    pub fn concat(&self, other: &NetParams) -> Result<NetParams> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        let net = NetParams { layers };
        net.validate()?;
        Ok(net)
    }

    /// Splits into the first `k` layers and the rest.
    pub fn split_at(mut self, k: usize) -> (NetParams, NetParams) {
        let tail = self.layers.split_off(k);
        (self, NetParams { layers: tail })
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Validation(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }
        let cache = ForwardCache { activations };
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    /// Accumulates parameter gradients into `grads` for one example.
    ///
    /// `extra` injects an additional dL/d(output of layer k) term, used for
    /// the latent L1 penalty. Returns dL/d(input) when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        extra: Option<(usize, &[f64])>,
        grads: &mut NetParams,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let mut grad = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some((k, g)) = extra {
                if k == i {
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            let out = &cache.activations[i + 1];
            let x = &cache.activations[i];
            let delta = layer.activation.backward(out, &grad);
            let gl = &mut grads.layers[i];
            for (b, d) in gl.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            let nonzero: Vec<usize> = (0..layer.fan_in).filter(|&c| x[c] != 0.0).collect();
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gl.weights[j * layer.fan_in..(j + 1) * layer.fan_in];
                for &c in &nonzero {
                    row[c] += d * x[c];
                }
            }
            if i == 0 && !want_input {
                return None;
            }
            let mut next = vec![0.0; layer.fan_in];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[j * layer.fan_in..(j + 1) * layer.fan_in];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            grad = next;
        }
        Some(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `-Σ t ln p` against a target distribution; needs a softmax head.
    CrossEntropy,
    /// `½‖y − t‖²`.
    Mse,
    /// `‖y − t‖²` with targets restricted to {0, 1}.
    BinaryTargetMse,
}

/// Loss of one example and its gradient with respect to the network output.
pub fn example_loss(output: &[f64], target: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    match kind {
        LossKind::CrossEntropy => {
            let mut loss = 0.0;
            let grad = output
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    if t != 0.0 {
                        loss -= t * p.max(LOG_CLAMP).ln();
                    }
                    if p > LOG_CLAMP {
                        -t / p
                    } else {
                        0.0
                    }
                })
                .collect();
            (loss, grad)
        }
        LossKind::Mse => {
            let mut loss = 0.0;
            let grad = output
                .iter()
                .zip(target)
                .map(|(&y, &t)| {
                    let r = y - t;
                    loss += r * r;
                    r
                })
                .collect();
            (0.5 * loss, grad)
        }
        LossKind::BinaryTargetMse => {
            let mut loss = 0.0;
            let grad = output
                .iter()
                .zip(target)
                .map(|(&y, &t)| {
                    let r = y - t;
                    loss += r * r;
                    2.0 * r
                })
                .collect();
            (loss, grad)
        }
    }
}

/// L1 norm of a latent vector and its subgradient (0 at 0).
pub fn l1_with_subgradient(z: &[f64]) -> (f64, Vec<f64>) {
    let norm = z.iter().map(|v| v.abs()).sum();
    let sub = z
        .iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    (norm, sub)
}

/// Mean loss over `batch` plus `l1_latent_coeff · ‖latent‖₁`, with exact
/// gradients of that scalar.
pub fn loss_and_grad(
    params: &NetParams,
    batch: &[(&[f64], &[f64])],
    kind: LossKind,
    l1_latent_coeff: f64,
    latent_layer_index: Option<usize>,
) -> Result<(f64, NetParams)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if !(l1_latent_coeff >= 0.0) {
        return Err(Error::Validation("L1 coefficient must be non-negative".into()));
    }
    match latent_layer_index {
        Some(k) if l1_latent_coeff == 0.0 => {
            return Err(Error::Validation(format!(
                "latent layer {k} given without an L1 coefficient"
            )))
        }
        Some(k) if k >= params.layers.len() => {
            return Err(Error::Validation(format!("latent layer {k} out of range")))
        }
        None if l1_latent_coeff > 0.0 => {
            return Err(Error::Validation("L1 coefficient given without a latent layer".into()))
        }
        _ => {}
    }
    if kind == LossKind::CrossEntropy && params.output_activation() != Activation::Softmax {
        return Err(Error::Contract("cross-entropy requires a softmax output".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for &(input, target) in batch {
        if target.len() != params.output_dim() {
            return Err(Error::Validation(format!(
                "target has {} values, network outputs {}",
                target.len(),
                params.output_dim()
            )));
        }
        if kind == LossKind::BinaryTargetMse && target.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Validation("binary targets must be 0 or 1".into()));
        }
        let (output, cache) = params.forward(input)?;
        let (loss, mut g) = example_loss(&output, target, kind);
        let mut example = loss;
        for v in &mut g {
            *v *= scale;
        }
        let latent = latent_layer_index.map(|k| {
            let (norm, mut sub) = l1_with_subgradient(cache.layer_output(k));
            example += l1_latent_coeff * norm;
            for v in &mut sub {
                *v *= l1_latent_coeff * scale;
            }
            (k, sub)
        });
        total += example;
        params.backward(
            &cache,
            &g,
            latent.as_ref().map(|(k, s)| (*k, s.as_slice())),
            &mut grads,
            false,
        );
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: NetParams,
    pub second_moment: NetParams,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &NetParams, epsilon: f64) -> Self {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::Validation("gradient shape does not match parameters".into()));
    }
    for (i, (g, p)) in grads.layers.iter().zip(&params.layers).enumerate() {
        if g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len() {
            return Err(Error::Validation(format!("gradient shape mismatch in layer {i}")));
        }
        if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                layer: i,
                message: "gradient is not finite".into(),
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let layers = params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first_moment.layers.iter_mut().zip(state.second_moment.layers.iter_mut()));
    for ((p, g), (m, v)) in layers {
        let p_iter = p.weights.iter_mut().chain(p.bias.iter_mut());
        let g_iter = g.weights.iter().chain(g.bias.iter());
        let m_iter = m.weights.iter_mut().chain(m.bias.iter_mut());
        let v_iter = v.weights.iter_mut().chain(v.bias.iter_mut());
        for (((p, &g), m), v) in p_iter.zip(g_iter).zip(m_iter).zip(v_iter) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [NetParams], max_norm: f64) -> f64 {
    let norm = grads.iter().map(NetParams::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}

pub fn write_params(w: &mut Writer, net: &NetParams) {
    w.usize(net.layers.len());
    for l in &net.layers {
        w.usize(l.fan_in);
        w.usize(l.fan_out);
        w.u8(l.activation.code());
        w.f64s(&l.weights);
        w.f64s(&l.bias);
    }
}

pub fn read_params(r: &mut Reader) -> Result<NetParams> {
    let n = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..n {
        let fan_in = r.usize()?;
        let fan_out = r.usize()?;
        let activation = Activation::from_code(r.u8()?)?;
        let weights = r.f64s()?;
        let bias = r.f64s()?;
        layers.push(Layer {
            fan_in,
            fan_out,
            weights,
            bias,
            activation,
        });
    }
    let net = NetParams { layers };
    net.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(net)
}

pub fn write_adam(w: &mut Writer, state: &AdamState) {
    write_params(w, &state.first_moment);
    write_params(w, &state.second_moment);
    w.u64(state.step_count);
    w.f64(state.beta1);
    w.f64(state.beta2);
    w.f64(state.epsilon);
}

pub fn read_adam(r: &mut Reader) -> Result<AdamState> {
    Ok(AdamState {
        first_moment: read_params(r)?,
        second_moment: read_params(r)?,
        step_count: r.u64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
    })
}
