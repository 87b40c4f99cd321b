//! Fully connected Q network: ReLU hidden layers, identity output, inverted
//! dropout, exact backpropagation of a squared-error loss and plain SGD.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub relu: bool,
    /// Probability of dropping each input of this layer during training.
    pub dropout: f64,
}

impl<T: Real> Layer<T> {
    fn affine(&self, x: &[T], out: &mut [T]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias)) {
            let mut acc = *b;
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            *o = acc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything backward needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of each layer after dropout.
    inputs: Vec<Vec<T>>,
    /// Dropout keep-scale per input element (0 or 1/(1-p)); empty when the
    /// layer has no dropout.
    masks: Vec<Vec<T>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zero(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|g| *g = T::zero());
    }

    pub fn scale(&mut self, k: T) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|g| *g *= k);
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().chain(self.bias.iter_mut()).zip(other.weights.iter().chain(&other.bias)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.weights.iter().chain(&self.bias).flatten().fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> Mlp<T> {
    /// Builds a network with widths `dims` (input first). Hidden layers use
    /// ReLU, the output is linear. `dropout[k]` applies to the input of layer
    /// `k`; missing entries mean no dropout. Weights are drawn uniformly from
    /// `±sqrt(6 / (fan_in + fan_out))`, biases start at zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], dropout: &[f64], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {dims:?}")));
        }
        if dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!("dropout probabilities must lie in [0,1): {dropout:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (dims[k], dims[k + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| T::of(rng.random_range(-limit..limit))).collect(),
                    bias: vec![T::zero(); fan_out],
                    relu: k + 1 < n,
                    dropout: dropout.get(k).copied().unwrap_or(0.0),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Q network with the agent layout: `input -> 64 -> 32 -> actions`,
    /// dropout 0.4 between the input and the first hidden layer.
    pub fn q_network<R: Rng + ?Sized>(input_dim: usize, actions: usize, rng: &mut R) -> Result<Self> {
        Self::new(&[input_dim, 64, 32, actions], &[0.4], rng)
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Shape { expected: w[0].out_dim, got: w[1].in_dim });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape { expected: l.in_dim * l.out_dim, got: l.weights.len() });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Deterministic forward pass (no dropout).
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut out = vec![T::zero(); l.out_dim];
            l.affine(&cur, &mut out);
            if l.relu {
                out.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            cur = out;
        }
        Ok(cur)
    }

    /// Training-mode forward pass with inverted dropout; keeps what backward needs.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mask = if l.dropout > 0.0 {
                let keep = T::of(1.0 / (1.0 - l.dropout));
                let m: Vec<T> = (0..cur.len())
                    .map(|_| if rng.random::<f64>() < l.dropout { T::zero() } else { keep })
                    .collect();
                cur.iter_mut().zip(&m).for_each(|(c, k)| *c *= *k);
                m
            } else {
                Vec::new()
            };
            let mut z = vec![T::zero(); l.out_dim];
            l.affine(&cur, &mut z);
            let a = if l.relu { z.iter().map(|v| v.max(T::zero())).collect() } else { z.clone() };
            inputs.push(std::mem::replace(&mut cur, a));
            masks.push(mask);
            pre.push(z);
        }
        Ok(ForwardCache { inputs, masks, pre, output: cur })
    }

    /// Forward pass in either mode. Train mode returns the cache for backward.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[T], mode: Mode, rng: &mut R) -> Result<(Vec<T>, Option<ForwardCache<T>>)> {
        match mode {
            Mode::Eval => Ok((self.predict(x)?, None)),
            Mode::Train => {
                let c = self.forward_train(x, rng)?;
                Ok((c.output.clone(), Some(c)))
            }
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            weights: self.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    /// Accumulates into `grads` the parameter gradient for output gradient
    /// `d_out`, reusing the dropout masks of `cache`.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &[T], grads: &mut Gradients<T>) -> Result<()> {
        if d_out.len() != self.output_dim() {
            return Err(Error::Shape { expected: self.output_dim(), got: d_out.len() });
        }
        if cache.pre.len() != self.layers.len() {
            return Err(Error::Usage("forward cache does not belong to this network".into()));
        }
        let mut delta: Vec<T> = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if l.relu {
                for (d, z) in delta.iter_mut().zip(&cache.pre[k]) {
                    if *z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let input = &cache.inputs[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                grads.bias[k][o] += *d;
                let row = &mut grads.weights[k][o * l.in_dim..(o + 1) * l.in_dim];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += *d * *x;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![T::zero(); l.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += *d * *w;
                }
            }
            if !cache.masks[k].is_empty() {
                prev.iter_mut().zip(&cache.masks[k]).for_each(|(p, m)| *p *= *m);
            }
            delta = prev;
        }
        Ok(())
    }

    /// `theta <- theta - lr * grad`.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.weights.len() != self.layers.len() {
            return Err(Error::Shape { expected: self.layers.len(), got: grads.weights.len() });
        }
        for (l, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            if gw.len() != l.weights.len() || gb.len() != l.bias.len() {
                return Err(Error::Shape { expected: l.weights.len(), got: gw.len() });
            }
            l.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * *g);
            l.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * *g);
        }
        Ok(())
    }

    /// Overwrites `target`'s parameters with this network's.
    pub fn copy_into(&self, target: &mut Self) -> Result<()> {
        if self.dims() != target.dims() {
            return Err(Error::Shape { expected: self.param_count(), got: target.param_count() });
        }
        for (src, dst) in self.layers.iter().zip(target.layers.iter_mut()) {
            dst.weights.copy_from_slice(&src.weights);
            dst.bias.copy_from_slice(&src.bias);
            dst.relu = src.relu;
            dst.dropout = src.dropout;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| a.weights.iter().zip(&b.weights).chain(a.bias.iter().zip(&b.bias)))
            .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
    }
}

/// Gradient of `sum_i (out_i - target_i)^2` at `out`.
pub fn mse_grad<T: Real>(out: &[T], target: &[T]) -> Vec<T> {
    out.iter().zip(target).map(|(o, t)| T::of(2.0) * (*o - *t)).collect()
}

const MAGIC: &[u8; 4] = b"DQNW";
const VERSION: u8 = 1;

/// Checkpoint layout: `DQNW`, version byte, layer count (u32 LE), per layer
/// `(in, out)` (u32 LE), then per layer the row-major weights followed by
/// the biases as f64 LE, then a UTF-8 text block describing activations and
/// dropout.
pub fn write_checkpoint<T: Real, W: Write>(net: &Mlp<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        w.write_all(&(l.in_dim as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim as u32).to_le_bytes())?;
    }
    for l in &net.layers {
        for v in l.weights.iter().chain(&l.bias) {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    let act: Vec<&str> = net.layers.iter().map(|l| if l.relu { "relu" } else { "identity" }).collect();
    let drop: Vec<String> = net.layers.iter().map(|l| l.dropout.to_string()).collect();
    write!(w, "activation={}\ndropout={}\n", act.join(","), drop.join(","))?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<Mlp<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if buf.len() < 9 || &buf[..4] != MAGIC {
        return Err(bad("missing DQNW magic"));
    }
    if buf[4] != VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let mut at = 5;
    let mut u32_at = |buf: &[u8]| -> Result<usize> {
        let b = buf.get(at..at + 4).ok_or_else(|| bad("truncated header"))?;
        at += 4;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    };
    let n = u32_at(&buf)?;
    let dims: Vec<(usize, usize)> = (0..n).map(|_| Ok((u32_at(&buf)?, u32_at(&buf)?))).collect::<Result<_>>()?;
    let mut f64_at = |buf: &[u8]| -> Result<f64> {
        let b = buf.get(at..at + 8).ok_or_else(|| bad("truncated parameters"))?;
        at += 8;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    };
    let mut layers = Vec::with_capacity(n);
    for &(i, o) in &dims {
        let weights = (0..i * o).map(|_| f64_at(&buf).map(T::of)).collect::<Result<Vec<_>>>()?;
        let bias = (0..o).map(|_| f64_at(&buf).map(T::of)).collect::<Result<Vec<_>>>()?;
        layers.push(Layer { in_dim: i, out_dim: o, weights, bias, relu: false, dropout: 0.0 });
    }
    let text = std::str::from_utf8(&buf[at..]).map_err(|_| bad("config block is not UTF-8"))?;
    for line in text.lines() {
        match line.split_once('=') {
            Some(("activation", v)) => {
                for (l, a) in layers.iter_mut().zip(v.split(',')) {
                    l.relu = a == "relu";
                }
            }
            Some(("dropout", v)) => {
                for (l, p) in layers.iter_mut().zip(v.split(',')) {
                    l.dropout = p.parse().map_err(|_| bad("bad dropout value"))?;
                }
            }
            _ => {}
        }
    }
    Mlp::from_layers(layers)
}
