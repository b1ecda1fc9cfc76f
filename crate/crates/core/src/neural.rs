//! Minimal dense networks with hand-written reverse-mode gradients, an
//! Adam optimizer, and the squashed-Gaussian policy head. Parameters live
//! in one flat `Vec<f64>` per network so optimizer state, target-network
//! blending, checkpointing and finite-difference probing all operate on a
//! single slice.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input length {got} does not match network input {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("upstream gradient length {got} does not match network output {expected}")]
    UpstreamShape { expected: usize, got: usize },
    #[error("non-finite gradient in {block} (flat index {index})")]
    NonFiniteGradient { block: String, index: usize },
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("checkpoint is corrupt: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dot product with four accumulators; breaking the dependency chain keeps
/// the batched training loops from being latency-bound.
#[inline]
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut rest = 0.0;
    for i in chunks * 4..n {
        rest += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + rest
}

/// Feedforward network: rectified-linear hidden layers, identity output.
/// Parameters are stored flat as `[W1, b1, W2, b2, ...]` with each weight
/// matrix row-major `(out x in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let count = Self::count_params(sizes);
        Self { sizes: sizes.to_vec(), params: vec![0.0; count] }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in + fan_out {
                net.params[offset] = rng.gen_range(-bound..bound);
                offset += 1;
            }
        }
        net
    }

    fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
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

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Flat offset of layer `l`'s weight block; biases follow the weights.
    fn layer_offset(&self, l: usize) -> usize {
        let mut off = 0;
        for i in 0..l {
            off += self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1];
        }
        off
    }

    /// Human-readable block name for a flat parameter index.
    pub fn block_name(&self, index: usize) -> String {
        let mut off = 0;
        for l in 0..self.layer_count() {
            let w = self.sizes[l] * self.sizes[l + 1];
            let b = self.sizes[l + 1];
            if index < off + w {
                return format!("layer {l} weights");
            }
            if index < off + w + b {
                return format!("layer {l} bias");
            }
            off += w + b;
        }
        "out of range".to_string()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let mut cache = MlpCache::for_net(self);
        self.forward_cached(input, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Forward pass that retains post-activation values for [`Self::backward`].
    /// The cache can be reused across calls to avoid reallocation.
    pub fn forward_cached(&self, input: &[f64], cache: &mut MlpCache) -> Result<(), NeuralError> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::InputShape { expected: self.input_dim(), got: input.len() });
        }
        cache.ensure_shape(&self.sizes);
        cache.layers[0].copy_from_slice(input);
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = self.layer_offset(l);
            let b_off = w_off + n_in * n_out;
            let (before, after) = cache.layers.split_at_mut(l + 1);
            let x = &before[l];
            let y = &mut after[0];
            let last = l + 1 == self.layer_count();
            for o in 0..n_out {
                let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                let mut v = dot4(row, x) + self.params[b_off + o];
                if !last && v < 0.0 {
                    v = 0.0;
                }
                y[o] = v;
            }
        }
        Ok(())
    }

    /// Gradient with respect to the input only; weight gradients are not
    /// computed. Used where a frozen network sits inside another loss.
    pub fn backward_input(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        input_grad: &mut [f64],
    ) -> Result<(), NeuralError> {
        if upstream.len() != self.output_dim() {
            return Err(NeuralError::UpstreamShape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = self.layer_offset(l);
            let mut next_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for i in 0..n_in {
                        next_delta[i] += row[i] * d;
                    }
                }
            }
            if l > 0 {
                for (nd, &act) in next_delta.iter_mut().zip(cache.layers[l].iter()) {
                    if act <= 0.0 {
                        *nd = 0.0;
                    }
                }
            } else {
                for (g, nd) in input_grad.iter_mut().zip(&next_delta) {
                    *g += nd;
                }
            }
            delta = next_delta;
        }
        Ok(())
    }

    /// Reverse pass. Parameter gradients are accumulated into `grads`
    /// (callers zero it once per batch); the optional `input_grad` receives
    /// the gradient with respect to the input, also accumulated.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        grads: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<(), NeuralError> {
        if upstream.len() != self.output_dim() {
            return Err(NeuralError::UpstreamShape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NeuralError::GradientShape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = self.layer_offset(l);
            let b_off = w_off + n_in * n_out;
            let x = &cache.layers[l];
            let mut next_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                    let grow = &mut grads[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += d * x[i];
                        next_delta[i] += row[i] * d;
                    }
                    grads[b_off + o] += d;
                }
            }
            if l > 0 {
                // Gate through the rectifier: post-activation zero means the
                // unit was clamped (ties at exactly zero get zero gradient).
                for (nd, &act) in next_delta.iter_mut().zip(cache.layers[l].iter()) {
                    if act <= 0.0 {
                        *nd = 0.0;
                    }
                }
                delta = next_delta;
            } else if let Some(ig) = input_grad.as_deref_mut() {
                for (g, nd) in ig.iter_mut().zip(&next_delta) {
                    *g += nd;
                }
            }
        }
        Ok(())
    }
}

/// Post-activation values of one forward pass; `layers[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    layers: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn for_net(net: &Mlp) -> Self {
        let mut c = Self::default();
        c.ensure_shape(&net.sizes);
        c
    }

    fn ensure_shape(&mut self, sizes: &[usize]) {
        if self.layers.len() != sizes.len() || self.layers.iter().zip(sizes).any(|(l, &s)| l.len() != s)
        {
            self.layers = sizes.iter().map(|&s| vec![0.0; s]).collect();
        }
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("cache initialized")
    }
}

/// Adam with bias correction over one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Block labels for gradient error reports: (name, end offset).
    blocks: Vec<(String, usize)>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            blocks: Vec::new(),
        }
    }

    /// Adam state shaped for `net`, retaining layer block names so a bad
    /// gradient can be attributed.
    pub fn for_mlp(net: &Mlp, learning_rate: f64) -> Self {
        let mut s = Self::new(net.param_count(), learning_rate);
        let mut end = 0;
        for l in 0..net.layer_count() {
            end += net.sizes()[l] * net.sizes()[l + 1];
            s.blocks.push((format!("layer {l} weights"), end));
            end += net.sizes()[l + 1];
            s.blocks.push((format!("layer {l} bias"), end));
        }
        s
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    fn block_of(&self, index: usize) -> String {
        for (name, end) in &self.blocks {
            if index < *end {
                return name.clone();
            }
        }
        format!("parameter block (index {index})")
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients, naming the
/// parameter block that produced them.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
) -> Result<(), NeuralError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(NeuralError::GradientShape { expected: params.len(), got: grads.len() });
    }
    for (i, &g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(NeuralError::NonFiniteGradient { block: state.block_of(i), index: i });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Numerically stable `log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))`.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Everything the training step needs from one reparameterized draw.
#[derive(Debug, Clone)]
pub struct ActorSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    /// Clamped log standard deviations.
    pub log_std: Vec<f64>,
    /// Whether the clamp was inactive per dimension (gradient gate).
    pub std_grad_gate: Vec<bool>,
    /// Pre-squash values `u = mean + std * noise`.
    pub pre_tanh: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Gaussian policy with a tanh squash: the trunk maps `(obs, preference)`
/// features to per-dimension means and raw log standard deviations, the
/// latter clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTanhActor {
    pub trunk: Mlp,
    pub action_dim: usize,
}

impl GaussianTanhActor {
    pub fn new(trunk: Mlp, action_dim: usize) -> Self {
        assert_eq!(trunk.output_dim(), 2 * action_dim, "trunk must emit mean and log-std");
        Self { trunk, action_dim }
    }

    pub fn init<R: Rng>(input_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self::new(Mlp::init(&sizes, rng), action_dim)
    }

    /// Reparameterized draw `a = tanh(mean + std * noise)` with the
    /// change-of-variables correction in the log-probability.
    pub fn sample<R: Rng>(&self, input: &[f64], rng: &mut R) -> Result<ActorSample, NeuralError> {
        let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(input, &noise)
    }

    /// RNG-driven draw with a reusable forward cache.
    pub fn sample_cached<R: Rng>(
        &self,
        input: &[f64],
        rng: &mut R,
        cache: &mut MlpCache,
    ) -> Result<ActorSample, NeuralError> {
        let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise_cached(input, &noise, cache)
    }

    /// Deterministic sampling path given the standard-normal draw; this is
    /// the function the actor loss differentiates through.
    pub fn sample_with_noise(
        &self,
        input: &[f64],
        noise: &[f64],
    ) -> Result<ActorSample, NeuralError> {
        let mut cache = MlpCache::for_net(&self.trunk);
        self.sample_with_noise_cached(input, noise, &mut cache)
    }

    /// Like [`Self::sample_with_noise`] but reusing a forward cache;
    /// the training loops call this per batch element.
    pub fn sample_with_noise_cached(
        &self,
        input: &[f64],
        noise: &[f64],
        cache: &mut MlpCache,
    ) -> Result<ActorSample, NeuralError> {
        self.trunk.forward_cached(input, cache)?;
        let head = cache.output();
        let k = self.action_dim;
        let mut out = ActorSample {
            action: vec![0.0; k],
            log_prob: 0.0,
            mean: head[..k].to_vec(),
            log_std: vec![0.0; k],
            std_grad_gate: vec![false; k],
            pre_tanh: vec![0.0; k],
            noise: noise.to_vec(),
        };
        for j in 0..k {
            let raw = head[k + j];
            let s = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            out.log_std[j] = s;
            out.std_grad_gate[j] = raw > LOG_STD_MIN && raw < LOG_STD_MAX;
            let u = out.mean[j] + s.exp() * noise[j];
            out.pre_tanh[j] = u;
            out.action[j] = u.tanh();
            out.log_prob += -0.5 * noise[j] * noise[j]
                - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - s
                - log_one_minus_tanh_sq(u);
        }
        Ok(out)
    }

    /// Density of a given squashed action under the current policy.
    pub fn log_prob_of(&self, input: &[f64], action: &[f64]) -> Result<f64, NeuralError> {
        let head = self.trunk.forward(input)?;
        let k = self.action_dim;
        let mut lp = 0.0;
        for j in 0..k {
            let s = head[k + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let u = atanh(action[j]);
            let xi = (u - head[j]) / s.exp();
            lp += -0.5 * xi * xi - 0.5 * (2.0 * std::f64::consts::PI).ln() - s
                - log_one_minus_tanh_sq(u);
        }
        Ok(lp)
    }

    /// Deterministic evaluation action `tanh(mean)`.
    pub fn mean_action(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let head = self.trunk.forward(input)?;
        Ok(head[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }
}

fn atanh(x: f64) -> f64 {
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

const BUNDLE_MAGIC: &[u8; 4] = b"QPNB";

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    format: String,
    dtype: String,
    networks: Vec<BundleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleEntry {
    name: String,
    sizes: Vec<usize>,
    param_count: usize,
}

/// Writes named networks as a JSON header followed by raw little-endian
/// f64 parameters. The round trip is bit-exact.
pub fn write_network_bundle<W: Write>(
    mut w: W,
    nets: &[(&str, &Mlp)],
) -> Result<(), NeuralError> {
    let header = BundleHeader {
        format: "mlp-bundle-v1".to_string(),
        dtype: "f64-le".to_string(),
        networks: nets
            .iter()
            .map(|(name, net)| BundleEntry {
                name: name.to_string(),
                sizes: net.sizes().to_vec(),
                param_count: net.param_count(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| NeuralError::BadCheckpoint(format!("header encoding: {e}")))?;
    w.write_all(BUNDLE_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, net) in nets {
        for p in net.params() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_network_bundle<R: Read>(mut r: R) -> Result<Vec<(String, Mlp)>, NeuralError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BUNDLE_MAGIC {
        return Err(NeuralError::BadCheckpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: BundleHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| NeuralError::BadCheckpoint(format!("header decoding: {e}")))?;
    if header.dtype != "f64-le" {
        return Err(NeuralError::BadCheckpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let mut nets = Vec::with_capacity(header.networks.len());
    for entry in header.networks {
        let expected = Mlp::count_params(&entry.sizes);
        if expected != entry.param_count {
            return Err(NeuralError::BadCheckpoint(format!(
                "network {} declares {} params but sizes imply {}",
                entry.name, entry.param_count, expected
            )));
        }
        let mut net = Mlp::zeros(&entry.sizes);
        let mut buf = [0u8; 8];
        for p in net.params_mut() {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        nets.push((entry.name, net));
    }
    Ok(nets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_maps_to_zero() {
        let net = Mlp::zeros(&[3, 4, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layers_pass_nonnegative_inputs() {
        let mut net = Mlp::zeros(&[3, 3, 3]);
        for l in 0..2 {
            let off = net.layer_offset(l);
            for i in 0..3 {
                net.params_mut()[off + i * 3 + i] = 1.0;
            }
        }
        let x = [0.5, 0.0, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    /// Naive re-implementation used as the duplicate oracle.
    fn naive_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let sizes = net.sizes();
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = net.params()[off + n_in * n_out + o];
                for i in 0..n_in {
                    acc += net.params()[off + o * n_in + i] * x[i];
                }
                y[o] = if l + 1 < sizes.len() - 1 { acc.max(0.0) } else { acc };
            }
            off += n_in * n_out + n_out;
            x = y;
        }
        x
    }

    #[test]
    fn forward_matches_naive_duplicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[5, 8, 8, 3], &mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    fn scalar_loss(net: &Mlp, x: &[f64], upstream: &[f64]) -> f64 {
        dot4(&net.forward(x).unwrap(), upstream)
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Mlp::init(&[4, 8, 8, 2], &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream = vec![0.7, -1.3];

        let mut cache = MlpCache::for_net(&net);
        net.forward_cached(&x, &mut cache).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        let mut input_grad = vec![0.0; 4];
        net.backward(&cache, &upstream, &mut grads, Some(&mut input_grad)).unwrap();

        let h = 1e-5;
        for idx in (0..net.param_count()).step_by(3) {
            let orig = net.params()[idx];
            net.params_mut()[idx] = orig + h;
            let up = scalar_loss(&net, &x, &upstream);
            net.params_mut()[idx] = orig - h;
            let down = scalar_loss(&net, &x, &upstream);
            net.params_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (grads[idx] - fd).abs() / (grads[idx].abs() + 1e-8);
            assert!(rel <= 1e-4, "param {idx}: analytic {} fd {fd}", grads[idx]);
        }
        // Input gradient against finite differences too.
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let up = scalar_loss(&net, &xp, &upstream);
            xp[i] = x[i] - h;
            let down = scalar_loss(&net, &xp, &upstream);
            let fd = (up - down) / (2.0 * h);
            let rel = (input_grad[i] - fd).abs() / (input_grad[i].abs() + 1e-8);
            assert!(rel <= 1e-4);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Mlp::init(&[3, 5, 2], &mut rng);
        let mut cache = MlpCache::for_net(&net);
        net.forward_cached(&[0.1, 0.2, 0.3], &mut cache).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&cache, &[0.0, 0.0], &mut grads, None).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_network_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::init(&[3, 2], &mut rng);
        let x = [0.5, -1.0, 2.0];
        let upstream = [2.0, -0.5];
        let mut cache = MlpCache::for_net(&net);
        net.forward_cached(&x, &mut cache).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&cache, &upstream, &mut grads, None).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((grads[o * 3 + i] - upstream[o] * x[i]).abs() <= 1e-15);
            }
            assert!((grads[6 + o] - upstream[o]).abs() <= 1e-15);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = vec![1.0, -2.0, 3.0];
        let grads = vec![0.5, -0.25, 4.0];
        let mut state = AdamState::new(3, 0.001);
        adam_step(&mut state, &mut params, &grads).unwrap();
        // At t=1 the bias-corrected update is lr * g / (|g| + eps).
        let expected = [1.0 - 0.001, -2.0 + 0.001, 3.0 - 0.001];
        for (p, e) in params.iter().zip(&expected) {
            assert!((p - e).abs() < 1e-9, "{p} vs {e}");
        }
    }

    #[test]
    fn adam_zero_gradient_preserves_params_and_decays_moments() {
        // Fresh state: a zero gradient must not move anything.
        let mut params = vec![1.0, 2.0];
        let mut state = AdamState::new(2, 0.01);
        adam_step(&mut state, &mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.0, 2.0]);
        // With prior momentum, zero gradients decay the moments by beta.
        adam_step(&mut state, &mut params, &[1.0, -1.0]).unwrap();
        let m_before = state.first_moment().to_vec();
        adam_step(&mut state, &mut params, &[0.0, 0.0]).unwrap();
        for (m_after, m_b) in state.first_moment().iter().zip(&m_before) {
            assert!((m_after - m_b * 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = vec![0.3, -0.7];
            let mut state = AdamState::new(2, 0.01);
            for _ in 0..5 {
                adam_step(&mut state, &mut params, &[0.1, 0.2]).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_gradient_with_block_name() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Mlp::init(&[2, 3, 1], &mut rng);
        let mut state = AdamState::for_mlp(&net, 0.001);
        let mut grads = vec![0.0; net.param_count()];
        grads[2 * 3] = f64::NAN; // first index of layer-0 bias
        let mut params = net.params().to_vec();
        match adam_step(&mut state, &mut params, &grads) {
            Err(NeuralError::NonFiniteGradient { block, .. }) => {
                assert_eq!(block, "layer 0 bias");
            }
            other => panic!("expected gradient error, got {other:?}"),
        }
    }

    fn tiny_actor(seed: u64) -> GaussianTanhActor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GaussianTanhActor::init(3, &[8], 1, &mut rng)
    }

    #[test]
    fn clamped_std_floor_makes_sampling_deterministic() {
        let mut actor = tiny_actor(1);
        // Force the raw log-std below the clamp floor via the output bias.
        let pc = actor.trunk.param_count();
        actor.trunk.params_mut()[pc - 1] = -50.0;
        // Zero the log-std output row so the bias dominates.
        let sizes = actor.trunk.sizes().to_vec();
        let last_w_off = actor.trunk.layer_offset(sizes.len() - 2);
        let n_in = sizes[sizes.len() - 2];
        for i in 0..n_in {
            actor.trunk.params_mut()[last_w_off + n_in + i] = 0.0;
        }
        let input = [0.2, -0.4, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s1 = actor.sample(&input, &mut rng).unwrap();
        let s2 = actor.sample(&input, &mut rng).unwrap();
        let mean = actor.mean_action(&input).unwrap();
        assert!((s1.action[0] - mean[0]).abs() < 1e-8);
        assert!((s2.action[0] - mean[0]).abs() < 1e-8);
        assert!(!s1.std_grad_gate[0]);
    }

    #[test]
    fn actions_stay_inside_the_open_cube() {
        let actor = tiny_actor(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s = actor.sample(&input, &mut rng).unwrap();
            assert!(s.action[0] > -1.0 && s.action[0] < 1.0);
        }
    }

    #[test]
    fn log_prob_matches_binned_density() {
        let actor = tiny_actor(5);
        let input = [0.1, 0.3, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 1_000_000usize;
        let lo = -0.999;
        let hi = 0.999;
        let bins = 40usize;
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for _ in 0..n {
            let s = actor.sample(&input, &mut rng).unwrap();
            let a = s.action[0];
            if a >= lo && a < hi {
                let b = ((a - lo) / width) as usize;
                counts[b.min(bins - 1)] += 1;
            }
        }
        // Compare empirical bin mass against the Simpson-rule integral of
        // exp(log_prob), restricted to bins with enough mass for a tight
        // Monte Carlo estimate.
        let density =
            |a: f64| -> f64 { actor.log_prob_of(&input, &[a]).unwrap().exp() };
        let mut checked = 0;
        for b in 0..bins {
            if counts[b] < 10_000 {
                continue;
            }
            let left = lo + b as f64 * width;
            let mass = width / 6.0
                * (density(left) + 4.0 * density(left + width / 2.0) + density(left + width));
            let empirical = counts[b] as f64 / n as f64;
            let rel = (empirical - mass).abs() / mass;
            assert!(rel < 0.02, "bin {b}: empirical {empirical}, expected {mass}");
            checked += 1;
        }
        assert!(checked >= 3, "too few well-populated bins ({checked})");
    }

    #[test]
    fn sampled_log_prob_agrees_with_log_prob_of() {
        let actor = tiny_actor(7);
        let input = [0.5, -0.5, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let s = actor.sample(&input, &mut rng).unwrap();
            let lp = actor.log_prob_of(&input, &s.action).unwrap();
            assert!((lp - s.log_prob).abs() < 1e-6, "{lp} vs {}", s.log_prob);
        }
    }

    #[test]
    fn network_bundle_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Mlp::init(&[4, 16, 2], &mut rng);
        let b = Mlp::init(&[2, 8, 8, 1], &mut rng);
        let mut buf = Vec::new();
        write_network_bundle(&mut buf, &[("a", &a), ("b", &b)]).unwrap();
        let back = read_network_bundle(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].1, b);
        // Bit-exactness: identical bytes when rewritten.
        let mut buf2 = Vec::new();
        write_network_bundle(&mut buf2, &[("a", &back[0].1), ("b", &back[1].1)]).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bundle_rejects_corrupt_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Mlp::init(&[2, 2], &mut rng);
        let mut buf = Vec::new();
        write_network_bundle(&mut buf, &[("a", &a)]).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_network_bundle(buf.as_slice()),
            Err(NeuralError::BadCheckpoint(_))
        ));
    }
}
