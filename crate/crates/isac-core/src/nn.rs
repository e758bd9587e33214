//! Minimal neural toolkit: MLP, diagonal Gaussian policy, Adam, checkpoints.
//!
//! Everything is `f64` and deliberately dependency-free so that runs are
//! bit-reproducible: parameters live in flat `Vec<f64>` buffers, shapes are
//! described by [`MlpSpec`], and all math is straight loops.  The networks
//! here are small (two hidden tanh layers, tens to hundreds of units), so
//! clarity and determinism beat vectorisation.
//!
//! Parameter layout per affine layer: weights row-major `(out × in)`, then
//! biases `(out)`.  A [`GaussianPolicy`] appends one state-independent
//! `log σ` per action dimension after the network parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("parameter buffer has length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(&'static str),
}

// ─── MLP ───────────────────────────────────────────────────────────────────

/// Shape of a fully-connected network: `hidden_layers` tanh layers of width
/// `hidden`, then a linear output layer.  `hidden_layers = 0` degenerates to
/// a single affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
}

impl MlpSpec {
    /// `(fan_in, fan_out)` of every affine layer in order.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.hidden_layers == 0 {
            return vec![(self.input, self.output)];
        }
        let mut dims = vec![(self.input, self.hidden)];
        for _ in 1..self.hidden_layers {
            dims.push((self.hidden, self.hidden));
        }
        dims.push((self.hidden, self.output));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Scaled-uniform fan-in init; the final layer is shrunk by
    /// `final_scale` (policies use 0.01 so initial actions stay near zero).
    pub fn init_params(&self, rng: &mut impl Rng, final_scale: f64) -> Vec<f64> {
        let dims = self.layer_dims();
        let mut params = Vec::with_capacity(self.num_params());
        for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if li + 1 == dims.len() { final_scale } else { 1.0 };
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..bound) * scale);
            }
            for _ in 0..fan_out {
                params.push(0.0);
            }
        }
        params
    }

    /// Forward pass returning the output and the activation cache needed by
    /// [`MlpSpec::backward`].
    pub fn forward(&self, params: &[f64], input: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(params.len(), self.num_params());
        debug_assert_eq!(input.len(), self.input);
        let dims = self.layer_dims();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(dims.len() + 1);
        acts.push(input.to_vec());
        let mut offset = 0;
        for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &params[offset..offset + fan_in * fan_out];
            let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let prev = &acts[li];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo += row.iter().zip(prev).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if li + 1 < dims.len() {
                for zo in z.iter_mut() {
                    *zo = zo.tanh();
                }
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        (out, MlpCache { acts })
    }

    /// Reverse pass: accumulates `∂(upstream · output)/∂θ` into `grads`
    /// (same layout as `params`) and returns the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.num_params());
        debug_assert_eq!(upstream.len(), self.output);
        let dims = self.layer_dims();
        // Offsets of each layer's parameter block.
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(fan_in, fan_out) in &dims {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
        let mut delta = upstream.to_vec();
        for li in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[li];
            let off = offsets[li];
            let w = &params[off..off + fan_in * fan_out];
            let a_in = &cache.acts[li];
            // Parameter gradients.
            for o in 0..fan_out {
                let d = delta[o];
                let wrow = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, ai) in wrow.iter_mut().zip(a_in) {
                    *g += d * ai;
                }
                grads[off + fan_in * fan_out + o] += d;
            }
            // Propagate to the layer input.
            let mut next = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (n, wi) in next.iter_mut().zip(row) {
                    *n += d * wi;
                }
            }
            // The input of this layer is a tanh output for every layer but
            // the first; fold in its derivative 1 - a².
            if li > 0 {
                for (n, a) in next.iter_mut().zip(a_in) {
                    *n *= 1.0 - a * a;
                }
            }
            delta = next;
        }
        delta
    }
}

/// Post-activation values of every layer (input first).
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

// ─── Gaussian policy ───────────────────────────────────────────────────────

/// Clamp range for the state-independent `log σ`; the lower end acts as the
/// exploration floor, the upper end keeps sampling sane.
pub const LOG_STD_MIN: f64 = -13.8; // σ ≈ 1e-6
pub const LOG_STD_MAX: f64 = 1.6; // σ ≈ 5

/// Diagonal Gaussian policy: an MLP mean head plus learned state-independent
/// log standard deviations appended to the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: MlpSpec,
}

impl GaussianPolicy {
    pub fn new(input: usize, hidden: usize, hidden_layers: usize, action_dim: usize) -> Self {
        Self { net: MlpSpec { input, hidden, hidden_layers, output: action_dim } }
    }

    pub fn action_dim(&self) -> usize {
        self.net.output
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.action_dim()
    }

    /// Network init plus `log σ = log(initial_std)` for every dimension.
    pub fn init_params(&self, rng: &mut impl Rng, initial_std: f64) -> Vec<f64> {
        let mut p = self.net.init_params(rng, 0.01);
        p.extend(std::iter::repeat(initial_std.ln()).take(self.action_dim()));
        p
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.net.num_params())
    }

    /// Mean and standard deviation at `obs` (σ floored via the log-std
    /// clamp range).
    pub fn mean_std(&self, params: &[f64], obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (net_p, log_std) = self.split(params);
        let (mean, _) = self.net.forward(net_p, obs);
        let std =
            log_std.iter().map(|&l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect();
        (mean, std)
    }

    /// Draws an action and returns its log-density.
    pub fn sample(
        &self,
        params: &[f64],
        obs: &[f64],
        rng: &mut impl Rng,
    ) -> (Vec<f64>, f64) {
        let (mean, std) = self.mean_std(params, obs);
        let action: Vec<f64> = mean
            .iter()
            .zip(&std)
            .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = gaussian_logp(&mean, &std, &action);
        (action, logp)
    }

    pub fn log_prob(&self, params: &[f64], obs: &[f64], action: &[f64]) -> f64 {
        let (mean, std) = self.mean_std(params, obs);
        gaussian_logp(&mean, &std, action)
    }

    /// Accumulates `scale · ∂ log π(action|obs) / ∂θ` into `grads` and
    /// returns the log-density.  `grads` covers the full parameter vector
    /// (network then log-std block).
    pub fn log_prob_grad(
        &self,
        params: &[f64],
        obs: &[f64],
        action: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> f64 {
        let (net_p, log_std) = self.split(params);
        let (mean, cache) = self.net.forward(net_p, obs);
        let std: Vec<f64> =
            log_std.iter().map(|&l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect();
        let logp = gaussian_logp(&mean, &std, action);
        let z: Vec<f64> =
            action.iter().zip(&mean).zip(&std).map(|((&a, &m), &s)| (a - m) / s).collect();
        // ∂logp/∂mean = z/σ, ∂logp/∂logσ = z² - 1.
        let upstream: Vec<f64> = z.iter().zip(&std).map(|(&zi, &s)| scale * zi / s).collect();
        let (net_g, std_g) = grads.split_at_mut(self.net.num_params());
        self.net.backward(net_p, &cache, &upstream, net_g);
        for (g, &zi) in std_g.iter_mut().zip(&z) {
            *g += scale * (zi * zi - 1.0);
        }
        logp
    }

    /// Current per-dimension action standard deviations.
    pub fn stds(&self, params: &[f64]) -> Vec<f64> {
        let (_, log_std) = self.split(params);
        log_std.iter().map(|&l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect()
    }

    /// Policy entropy (state-independent for a diagonal Gaussian).
    pub fn entropy(&self, params: &[f64]) -> f64 {
        let (_, log_std) = self.split(params);
        log_std
            .iter()
            .map(|&l| l.clamp(LOG_STD_MIN, LOG_STD_MAX) + 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()))
            .sum()
    }

    /// Adds `scale · ∂entropy/∂θ` (nonzero only on the log-std block).
    pub fn entropy_grad(&self, scale: f64, grads: &mut [f64]) {
        let n = self.net.num_params();
        for g in grads[n..].iter_mut() {
            *g += scale;
        }
    }

    /// Projects the log-std block back into its clamp range after an
    /// optimizer step.
    pub fn clamp_log_std(&self, params: &mut [f64]) {
        let n = self.net.num_params();
        for p in params[n..].iter_mut() {
            *p = p.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

fn gaussian_logp(mean: &[f64], std: &[f64], action: &[f64]) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    mean.iter()
        .zip(std)
        .zip(action)
        .map(|((&m, &s), &a)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * ln2pi
        })
        .sum()
}

// ─── Adam ──────────────────────────────────────────────────────────────────

/// Adam with bias correction.  Steps carrying any non-finite gradient are
/// skipped (and logged) rather than poisoning the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// Drops the moment estimates (used at curriculum transitions).
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Flat state for checkpointing: step count then both moment vectors.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![self.t as f64];
        v.extend_from_slice(&self.m);
        v.extend_from_slice(&self.v);
        v
    }

    /// Restores an optimizer saved by [`Adam::to_flat`].
    pub fn from_flat(num_params: usize, lr: f64, flat: &[f64]) -> Option<Self> {
        if flat.len() != 1 + 2 * num_params {
            return None;
        }
        let mut adam = Self::new(num_params, lr);
        adam.t = flat[0] as u64;
        adam.m.copy_from_slice(&flat[1..1 + num_params]);
        adam.v.copy_from_slice(&flat[1 + num_params..]);
        Some(adam)
    }

    /// Applies one descent step in place.  Returns `false` (parameters
    /// untouched) if the gradient contains a non-finite entry.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> bool {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("skipping optimizer step: non-finite gradient");
            return false;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        true
    }
}

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

// ─── Checkpoints ───────────────────────────────────────────────────────────

/// Named tensor block of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Block {
    pub fn vector(name: &str, data: Vec<f64>) -> Self {
        Self { name: name.to_string(), dims: vec![data.len() as u64], data }
    }

    pub fn scalar(name: &str, value: f64) -> Self {
        Self { name: name.to_string(), dims: vec![1], data: vec![value] }
    }
}

const CKPT_MAGIC: &[u8; 8] = b"ISACNET1";

/// Writes a checkpoint: magic, block count, then per block `name_len/u32`,
/// name bytes, `ndims/u32`, dims as `u64`, data as little-endian `f64`.
/// Round-trips are bit-exact.
pub fn write_checkpoint(path: &std::path::Path, blocks: &[Block]) -> Result<(), NnError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        let name = b.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(b.dims.len() as u32).to_le_bytes());
        for &d in &b.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        let expect: u64 = b.dims.iter().product();
        assert_eq!(expect as usize, b.data.len(), "block {} dims mismatch", b.name);
        for &x in &b.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &std::path::Path) -> Result<Vec<Block>, NnError> {
    let buf = std::fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], NnError> {
        if *pos + n > buf.len() {
            return Err(NnError::Corrupt("truncated"));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != CKPT_MAGIC {
        return Err(NnError::Corrupt("bad magic"));
    }
    let n_blocks = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| NnError::Corrupt("name not utf-8"))?;
        let ndims = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let count = dims.iter().product::<u64>() as usize;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        blocks.push(Block { name, dims, data });
    }
    Ok(blocks)
}

// ─── Tests ─────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_affine_layer_hand_value() {
        let spec = MlpSpec { input: 2, hidden: 0, hidden_layers: 0, output: 1 };
        assert_eq!(spec.num_params(), 3);
        let params = [1.0, 2.0, 3.0]; // w = [1, 2], b = 3
        let (out, _) = spec.forward(&params, &[4.0, 5.0]);
        assert_abs_diff_eq!(out[0], 17.0);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec { input: 3, hidden: 8, hidden_layers: 2, output: 2 };
        let params = vec![0.0; spec.num_params()];
        let (out, _) = spec.forward(&params, &[1.0, -2.0, 0.5]);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        // Re-read the flat layout and recompute with nested loops written
        // from the layout documentation alone.
        let spec = MlpSpec { input: 3, hidden: 5, hidden_layers: 2, output: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = spec.init_params(&mut rng, 1.0);
        let x = [0.3, -1.2, 0.8];
        let (out, _) = spec.forward(&params, &x);

        let affine = |p: &[f64], input: &[f64], fan_in: usize, fan_out: usize| -> Vec<f64> {
            (0..fan_out)
                .map(|o| {
                    let w = &p[o * fan_in..(o + 1) * fan_in];
                    let b = p[fan_in * fan_out + o];
                    b + w.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>()
                })
                .collect()
        };
        let l1 = 3 * 5 + 5;
        let l2 = 5 * 5 + 5;
        let h1: Vec<f64> = affine(&params[..l1], &x, 3, 5).iter().map(|z| z.tanh()).collect();
        let h2: Vec<f64> =
            affine(&params[l1..l1 + l2], &h1, 5, 5).iter().map(|z| z.tanh()).collect();
        let expect = affine(&params[l1 + l2..], &h2, 5, 2);
        for (a, b) in out.iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let spec = MlpSpec { input: 4, hidden: 16, hidden_layers: 2, output: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = spec.init_params(&mut rng, 1.0);
        let x = [0.1, 0.2, -0.3, 0.9];
        let (a, _) = spec.forward(&params, &x);
        let (b, _) = spec.forward(&params, &x);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn backward_matches_central_differences() {
        let spec = MlpSpec { input: 3, hidden: 8, hidden_layers: 2, output: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..5 {
            let params = spec.init_params(&mut rng, 1.0);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |p: &[f64]| -> f64 {
                let (out, _) = spec.forward(p, &x);
                out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
            };
            let mut grads = vec![0.0; spec.num_params()];
            let (_, cache) = spec.forward(&params, &x);
            let input_grad = spec.backward(&params, &cache, &upstream, &mut grads);

            let h = 1e-6;
            for i in 0..params.len() {
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp[i] += h;
                pm[i] -= h;
                let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
                assert!(
                    (grads[i] - fd).abs() / fd.abs().max(1e-4) < 1e-5,
                    "param {i}: analytic {} vs fd {fd}",
                    grads[i]
                );
            }
            // Input gradient too.
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let f = |xx: &[f64]| -> f64 {
                    let (out, _) = spec.forward(&params, xx);
                    out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
                };
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((input_grad[i] - fd).abs() / fd.abs().max(1e-4) < 1e-5);
            }
        }
    }

    #[test]
    fn saturated_inputs_stay_finite() {
        let spec = MlpSpec { input: 2, hidden: 8, hidden_layers: 2, output: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = spec.init_params(&mut rng, 1.0);
        let (out, cache) = spec.forward(&params, &[1e3, -1e3]);
        assert!(out[0].is_finite());
        let mut grads = vec![0.0; spec.num_params()];
        let ig = spec.backward(&params, &cache, &[1.0], &mut grads);
        assert!(grads.iter().all(|g| g.is_finite()));
        assert!(ig.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn policy_logp_of_mean_hand_value() {
        // At the mean, logp = Σ(-log σ - ½ log 2π); σ = 0.5, two dims.
        let pol = GaussianPolicy::new(2, 0, 0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = pol.init_params(&mut rng, 0.5);
        // Zero the network so the mean is exactly zero.
        for p in params[..pol.net.num_params()].iter_mut() {
            *p = 0.0;
        }
        let logp = pol.log_prob(&params, &[0.3, -0.4], &[0.0, 0.0]);
        let expect = 2.0 * (-(0.5f64.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln());
        assert_relative_eq!(logp, expect, epsilon = 1e-12);
    }

    #[test]
    fn policy_sample_moments() {
        let pol = GaussianPolicy::new(1, 0, 0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = pol.init_params(&mut rng, 0.5);
        for p in params[..pol.net.num_params()].iter_mut() {
            *p = 0.0;
        }
        params[pol.net.num_params()] = 0.7f64.ln();
        let trials = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..trials {
            let (a, logp) = pol.sample(&params, &[0.0], &mut rng);
            assert!(logp.is_finite());
            sum += a[0];
            sq += a[0] * a[0];
        }
        let mean = sum / trials as f64;
        let std = (sq / trials as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.01);
        assert_relative_eq!(std, 0.7, max_relative = 0.01);
    }

    #[test]
    fn policy_at_std_floor_returns_mean() {
        let pol = GaussianPolicy::new(1, 0, 0, 1);
        let mut params = vec![0.0, 0.0, -100.0]; // w, b, log_std
        pol.clamp_log_std(&mut params);
        assert_eq!(params[2], LOG_STD_MIN);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, logp) = pol.sample(&params, &[0.5], &mut rng);
        assert!(a[0].abs() < 1e-4);
        assert!(logp.is_finite());
    }

    #[test]
    fn policy_grad_matches_central_differences() {
        let pol = GaussianPolicy::new(3, 6, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = {
            let mut p = pol.init_params(&mut rng, 0.5);
            // Perturb log-std away from init so its gradient is generic.
            let n = pol.net.num_params();
            p[n] = -0.3;
            p[n + 1] = 0.2;
            p
        };
        let obs = [0.2, -0.7, 1.1];
        let action = [0.4, -0.1];
        let mut grads = vec![0.0; pol.num_params()];
        let logp = pol.log_prob_grad(&params, &obs, &action, 1.0, &mut grads);
        assert_relative_eq!(logp, pol.log_prob(&params, &obs, &action), epsilon = 1e-12);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd =
                (pol.log_prob(&pp, &obs, &action) - pol.log_prob(&pm, &obs, &action)) / (2.0 * h);
            assert!(
                (grads[i] - fd).abs() / fd.abs().max(1e-4) < 1e-5,
                "param {i}: analytic {} vs fd {fd}",
                grads[i]
            );
        }
    }

    #[test]
    fn entropy_matches_formula_and_grad() {
        let pol = GaussianPolicy::new(1, 0, 0, 2);
        let mut params = vec![0.0; pol.num_params()];
        let n = pol.net.num_params();
        params[n] = 0.5f64.ln();
        params[n + 1] = 2.0f64.ln();
        let expect: f64 = [0.5f64, 2.0]
            .iter()
            .map(|s| s.ln() + 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()))
            .sum();
        assert_relative_eq!(pol.entropy(&params), expect, epsilon = 1e-12);
        let mut grads = vec![0.0; pol.num_params()];
        pol.entropy_grad(0.3, &mut grads);
        assert_eq!(grads[n], 0.3);
        assert_eq!(grads[n + 1], 0.3);
        assert!(grads[..n].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut adam = Adam::new(3, 0.1);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        assert!(adam.step(&mut params, &[0.0, 0.0, 0.0]));
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        // With bias correction, the first step is lr·g/(|g| + ε) ≈ lr·sign.
        let mut adam = Adam::new(2, 0.01);
        let mut params = vec![0.0, 0.0];
        assert!(adam.step(&mut params, &[3.0, -0.2]));
        assert_relative_eq!(params[0], -0.01 * 3.0 / (3.0 + 1e-8), epsilon = 1e-12);
        assert_relative_eq!(params[1], 0.01 * 0.2 / (0.2 + 1e-8), epsilon = 1e-12);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let target = [3.0, -1.5, 0.25];
        let mut params = vec![0.0; 3];
        let mut adam = Adam::new(3, 0.05);
        for _ in 0..2000 {
            let grads: Vec<f64> =
                params.iter().zip(&target).map(|(p, t)| p - t).collect();
            adam.step(&mut params, &grads);
        }
        for (p, t) in params.iter().zip(&target) {
            assert_abs_diff_eq!(p, t, epsilon = 1e-3);
        }
    }

    #[test]
    fn adam_skips_nan_gradients() {
        let mut adam = Adam::new(2, 0.1);
        let mut params = vec![1.0, 2.0];
        assert!(!adam.step(&mut params, &[f64::NAN, 0.0]));
        assert_eq!(params, vec![1.0, 2.0]);
        assert!(!adam.step(&mut params, &[0.0, f64::INFINITY]));
        assert_eq!(params, vec![1.0, 2.0]);
    }

    #[test]
    fn grad_clip_rescales_to_cap() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_grad_norm(&mut g, 0.5);
        assert_relative_eq!(norm, 5.0);
        assert_relative_eq!((g[0] * g[0] + g[1] * g[1]).sqrt(), 0.5, epsilon = 1e-12);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data: Vec<f64> = (0..100)
            .map(|_| rng.gen_range(-1e10..1e10) * 10f64.powi(rng.gen_range(-30..30)))
            .collect();
        let blocks = vec![
            Block::vector("actor0", data.clone()),
            Block::scalar("meta/seed", 42.0),
            Block { name: "mat".into(), dims: vec![2, 3], data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] },
        ];
        write_checkpoint(&path, &blocks).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in blocks.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
