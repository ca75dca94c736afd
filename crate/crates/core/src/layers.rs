//! Building blocks shared by the encoder, decoder and heads. Each layer only
//! holds parameter ids; values live in the [`ParamStore`](crate::params::ParamStore).

use ndarray::Array2;

use crate::autograd::{Graph, Var};
use crate::params::Initializer;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = init.fan_in_uniform(format!("{name}.weight"), (in_dim, out_dim), in_dim);
        let bias = Some(init.fan_in_uniform(format!("{name}.bias"), (1, out_dim), in_dim));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn without_bias(init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = init.fan_in_uniform(format!("{name}.weight"), (in_dim, out_dim), in_dim);
        Self { weight, bias: None, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Temporal convolution over a `[L, C]` sequence; odd kernel, zero padding,
/// stride 1.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub linear: Linear,
}

impl Conv1d {
    pub fn new(init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize, kernel: usize) -> Self {
        Self { kernel, linear: Linear::new(init, name, kernel * in_dim, out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.linear.in_dim / self.kernel
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let cols = if self.kernel == 1 { x } else { g.im2col_1d(x, self.kernel) };
        self.linear.forward(g, cols)
    }
}

/// Spatial convolution over an `[h * w, C]` map; odd kernel, zero padding,
/// stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernel: usize,
    pub linear: Linear,
}

impl Conv2d {
    pub fn new(init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize, kernel: usize) -> Self {
        Self { kernel, linear: Linear::new(init, name, kernel * kernel * in_dim, out_dim) }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> Var {
        let cols = if self.kernel == 1 { x } else { g.im2col_2d(x, h, w, self.kernel) };
        self.linear.forward(g, cols)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(init: &mut Initializer, name: &str, dim: usize) -> Self {
        let gamma = init.constant(format!("{name}.gamma"), (1, dim), 1.0);
        let beta = init.constant(format!("{name}.beta"), (1, dim), 0.0);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Initializer, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads >= 1 && dim.is_multiple_of(heads), "width {dim} not divisible by {heads} heads");
        Self {
            heads,
            dim,
            q: Linear::new(init, &format!("{name}.q"), dim, dim),
            // A key bias only shifts each score row by a constant, which the
            // softmax cancels.
            k: Linear::without_bias(init, &format!("{name}.k"), dim, dim),
            v: Linear::new(init, &format!("{name}.v"), dim, dim),
            out: Linear::new(init, &format!("{name}.out"), dim, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, x);
        let v = self.v.forward(g, x);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, start, head_dim), g.slice_cols(k, start, head_dim), g.slice_cols(v, start, head_dim))
            };
            let scores = g.matmul_t(qh, false, kh, true);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.out.forward(g, merged)
    }
}

/// Pre-norm transformer encoder layer with a ReLU feed-forward block.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl TransformerLayer {
    pub fn new(init: &mut Initializer, name: &str, dim: usize, heads: usize, ff_dim: usize) -> Self {
        Self {
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), dim),
            ff1: Linear::new(init, &format!("{name}.ff1"), dim, ff_dim),
            ff2: Linear::new(init, &format!("{name}.ff2"), ff_dim, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.norm1.forward(g, x);
        let h = self.attn.forward(g, h);
        let x = g.add(x, h);
        let h = self.norm2.forward(g, x);
        let h = self.ff1.forward(g, h);
        let h = g.relu(h);
        let h = self.ff2.forward(g, h);
        g.add(x, h)
    }
}

/// Stack of transformer layers with sinusoidal positions added to the input
/// and a closing layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub dim: usize,
    layers: Vec<TransformerLayer>,
    norm: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(init: &mut Initializer, name: &str, dim: usize, depth: usize, heads: usize, ff_dim: usize) -> Self {
        let layers = (0..depth)
            .map(|i| TransformerLayer::new(init, &format!("{name}.layer{i}"), dim, heads, ff_dim))
            .collect();
        Self { dim, layers, norm: LayerNorm::new(init, &format!("{name}.norm"), dim) }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (l, _) = g.shape(x);
        let pos = g.constant(sinusoidal_positions(l, self.dim));
        let mut h = g.add(x, pos);
        for layer in &self.layers {
            h = layer.forward(g, h);
        }
        self.norm.forward(g, h)
    }
}

/// Standard sine/cosine position table of shape `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
