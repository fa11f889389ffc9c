//! Parameterized building blocks. Each layer owns only [`ParamId`]s; values
//! live in a [`ParamStore`] and are bound per forward pass through [`Bound`].

use alloc::format;
use alloc::vec::Vec;

use super::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rng::{self, SimRng};

/// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform<T: Scalar>(rng: &mut SimRng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let n = super::numel(shape);
    Tensor::new(shape, (0..n).map(|_| T::from_f64(rng::uniform(rng, -bound, bound))).collect())
}

pub fn normal_init<T: Scalar>(rng: &mut SimRng, shape: &[usize], std: f64) -> Tensor<T> {
    let n = super::numel(shape);
    Tensor::new(shape, (0..n).map(|_| T::from_f64(std * rng::normal(rng))).collect())
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut SimRng) -> Self {
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[inputs, outputs], inputs));
        let bias = store.add(&format!("{name}.bias"), fan_in_uniform(rng, &[outputs], inputs));
        Self { weight, bias: Some(bias), inputs, outputs }
    }

    pub fn no_bias<T: Scalar>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut SimRng) -> Self {
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[inputs, outputs], inputs));
        Self { weight, bias: None, inputs, outputs }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let w = p.get(g, self.weight);
        let b = self.bias.map(|b| p.get(g, b));
        g.dense(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SimRng,
    ) -> Self {
        let fan_in = inputs * kernel * kernel;
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[outputs, inputs, kernel, kernel], fan_in));
        let bias = store.add(&format!("{name}.bias"), fan_in_uniform(rng, &[outputs], fan_in));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let w = p.get(g, self.weight);
        let b = p.get(g, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SimRng,
    ) -> Self {
        let fan_in = inputs * kernel * kernel / (stride * stride).max(1);
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[inputs, outputs, kernel, kernel], fan_in));
        let bias = store.add(&format!("{name}.bias"), fan_in_uniform(rng, &[outputs], fan_in));
        Self { weight, bias, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let w = p.get(g, self.weight);
        let b = p.get(g, self.bias);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[width], T::ONE));
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[width]));
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let gamma = p.get(g, self.gamma);
        let beta = p.get(g, self.beta);
        g.layer_norm(x, gamma, beta, T::from_f64(Self::EPS))
    }
}

/// `x + conv2(relu(conv1(x)))` with 3x3 same-size convolutions.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut SimRng) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let h = self.conv1.forward(g, p, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h);
        g.add(x, h)
    }
}

/// Multi-head cross attention: queries from `x`, keys and values from `y`,
/// scaled dot-product per head, heads concatenated and projected by `w_o`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub width: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("attention width {width} is not divisible by {heads} heads")]
pub struct HeadsError {
    pub width: usize,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut SimRng,
    ) -> Result<Self, HeadsError> {
        if heads == 0 || width % heads != 0 {
            return Err(HeadsError { width, heads });
        }
        let mut proj = |suffix: &str| store.add(&format!("{name}.{suffix}"), fan_in_uniform(rng, &[width, width], width));
        Ok(Self { w_q: proj("w_q"), w_k: proj("w_k"), w_v: proj("w_v"), w_o: proj("w_o"), width, heads })
    }

    /// `x`: `[B, Tq, D]`. `y`: `[B, Tk, D]`, or `[Tk, D]` shared by the batch.
    /// Returns `[B, Tq, D]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var, y: Var) -> Var {
        let (wq, wk, wv, wo) = (p.get(g, self.w_q), p.get(g, self.w_k), p.get(g, self.w_v), p.get(g, self.w_o));
        self.forward_with(g, x, y, [wq, wk, wv, wo])
    }

    pub(crate) fn forward_with<T: Scalar>(&self, g: &mut Graph<T>, x: Var, y: Var, w: [Var; 4]) -> Var {
        let sx = g.shape(x).to_vec();
        assert!(sx.len() == 3 && sx[2] == self.width, "attention query shape {:?}, width {}", sx, self.width);
        let (b, tq) = (sx[0], sx[1]);
        let y = if g.shape(y).len() == 2 { g.broadcast_batch(y, b) } else { y };
        let sy = g.shape(y).to_vec();
        assert!(sy.len() == 3 && sy[0] == b && sy[2] == self.width, "attention key/value shape {:?}", sy);
        let tk = sy[1];
        let (h, d) = (self.heads, self.width / self.heads);
        let split = |g: &mut Graph<T>, v: Var, t: usize| {
            let v = g.reshape(v, &[b, t, h, d]);
            let v = g.permute(v, &[0, 2, 1, 3]);
            g.reshape(v, &[b * h, t, d])
        };
        let q = g.matmul(x, w[0]);
        let k = g.matmul(y, w[1]);
        let v = g.matmul(y, w[2]);
        let q = split(g, q, tq);
        let k = split(g, k, tk);
        let v = split(g, v, tk);
        let scores = g.matmul_t(q, k, false, true);
        let scores = g.scale(scores, T::from_f64(1.0 / libm::sqrt(d as f64)));
        let attn = g.softmax(scores, 2);
        let ctx = g.matmul(attn, v);
        let ctx = g.reshape(ctx, &[b, h, tq, d]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, tq, self.width]);
        g.matmul(ctx, w[3])
    }
}

/// Dense layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, sizes: &[usize], rng: &mut SimRng) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.fc{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: Bound<'_, T>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }
}
