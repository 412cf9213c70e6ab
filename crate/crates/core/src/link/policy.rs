//! Multilayer-perceptron link policy with a masked softmax head.
//!
//! # Weight file
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754 `f64`.
//!
//! ```text
//! magic       8 bytes   "SWPOLICY"
//! version     u32       1
//! activation  u32       0 = relu, 1 = tanh
//! n_sizes     u32       number of layer widths (input, hidden..., output)
//! sizes       u32 × n_sizes
//! params      f64 × P   for each affine layer in order: weights row-major
//!                       [out][in], then bias [out]
//! ```
//!
//! Nothing follows the parameter block; a trailing byte is a format error.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::env::Mask;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SWPOLICY";
const VERSION: u32 = 1;

/// Default architecture: four observations, two hidden layers of 64, four action logits.
pub const DEFAULT_SIZES: [usize; 4] = [4, 64, 64, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            t => Err(Error::Shape(format!("unknown activation tag {t}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Dense network stored as one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Per-layer activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[k]` the output of layer `k`; the last holds logits.
    acts: Vec<Vec<f64>>,
    pub probs: [f64; 4],
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::from_params(sizes, activation, vec![0.0; param_count(sizes)])
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        if sizes[sizes.len() - 1] != 4 {
            return Err(Error::Shape(format!("policy head must have 4 outputs, got {}", sizes[sizes.len() - 1])));
        }
        if params.len() != param_count(sizes) {
            return Err(Error::Shape(format!(
                "expected {} parameters for {sizes:?}, got {}",
                param_count(sizes),
                params.len()
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    /// Uniform fan-in initialization, scaled for the activation.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn forward(&self, obs: &[f64], mask: &Mask) -> Result<ForwardCache> {
        if obs.len() != self.input_len() {
            return Err(Error::Shape(format!("expected {} inputs, got {}", self.input_len(), obs.len())));
        }
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(obs.to_vec());
        let mut offset = 0;
        for (k, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &acts[k];
            let mut out = bias.to_vec();
            for (o, row) in out.iter_mut().zip(weights.chunks_exact(n_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if k + 1 < layers {
                out.iter_mut().for_each(|x| *x = self.activation.apply(*x));
            }
            acts.push(out);
            offset += n_in * n_out + n_out;
        }
        let probs = masked_softmax(acts.last().unwrap(), mask)?;
        Ok(ForwardCache { acts, probs })
    }

    /// Adds `weight · ∇θ log π(action | obs)` into `grad`.
    pub fn accumulate_log_prob_grad(&self, cache: &ForwardCache, mask: &Mask, action: usize, weight: f64, grad: &mut [f64]) {
        debug_assert!(mask[action]);
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        // d log softmax / d logits, zero on masked entries
        let mut delta: Vec<f64> = (0..4)
            .map(|j| {
                if mask[j] {
                    weight * (f64::from(u8::from(j == action)) - cache.probs[j])
                } else {
                    0.0
                }
            })
            .collect();
        let mut offset = self.params.len();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            offset -= n_in * n_out + n_out;
            let input = &cache.acts[k];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d != 0.0 {
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let weights = &self.params[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
            }
            for (p, &y) in prev.iter_mut().zip(input) {
                *p *= self.activation.grad_from_output(y);
            }
            delta = prev;
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.activation.tag().to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Shape("not a policy weight file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Shape(format!("unsupported weight file version {version}")));
        }
        let activation = Activation::from_tag(read_u32(&mut r)?)?;
        let n = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Shape(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| read_u32(&mut r).map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mut params = vec![0.0; param_count(&sizes)];
        let mut buf = [0u8; 8];
        for p in &mut params {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Shape(format!("{} trailing bytes after parameters", rest.len())));
        }
        Self::from_params(&sizes, activation, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Softmax over the legal entries; masked entries get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &Mask) -> Result<[f64; 4]> {
    if logits.len() != 4 {
        return Err(Error::Shape(format!("expected 4 logits, got {}", logits.len())));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numerical("every action is masked".into()));
    }
    let mut probs = [0.0; 4];
    for j in 0..4 {
        if mask[j] {
            probs[j] = (logits[j] - max).exp();
        }
    }
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Action probabilities for one observation.
pub fn policy_forward(net: &Mlp, obs: &[f64], mask: &Mask) -> Result<[f64; 4]> {
    Ok(net.forward(obs, mask)?.probs)
}

pub fn sample_action<R: Rng + ?Sized>(probs: &[f64; 4], mask: &Mask, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for j in 0..4 {
        if mask[j] {
            acc += probs[j];
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Most probable legal action; ties go to the lowest index.
pub fn greedy_action(probs: &[f64; 4], mask: &Mask) -> usize {
    let mut best = None;
    for j in 0..4 {
        if mask[j] && best.is_none_or(|b: usize| probs[j] > probs[b]) {
            best = Some(j);
        }
    }
    best.expect("WAIT is always legal")
}
