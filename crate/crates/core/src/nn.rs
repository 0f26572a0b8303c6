//! Layers built on the autodiff tape. Each layer owns only parameter ids;
//! values live in the shared [`ParamStore`](crate::params::ParamStore).

use ndarray::Array2;

use crate::graph::{Graph, Var};
use crate::params::{ParamBuilder, ParamId};

/// `x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        pb.scoped(name, |pb| Self {
            weight: pb.uniform("weight", in_dim, out_dim, in_dim),
            bias: bias.then(|| pb.zeros("bias", 1, out_dim)),
            in_dim,
            out_dim,
        })
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

/// Same-padded 1-D convolution over the time (row) axis. The kernel is
/// stored flattened as `[kernel * in, out]` so the layer is an unfold
/// followed by a matrix product.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        pb.scoped(name, |pb| Self {
            weight: pb.uniform("weight", kernel * in_dim, out_dim, kernel * in_dim),
            bias: pb.zeros("bias", 1, out_dim),
            kernel,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let cols = if self.kernel == 1 { x } else { g.unfold(x, self.kernel) };
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

/// Per-row layer normalisation with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            gain: pb.constant("gain", 1, dim, 1.0),
            shift: pb.zeros("shift", 1, dim),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = g.standardize(x, Self::EPS);
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        let y = g.mul_row(y, gain);
        g.add_row(y, shift)
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Attention output together with the per-head weight matrices.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "width {dim} not divisible by {heads} heads");
        pb.scoped(name, |pb| Self {
            query: Linear::new(pb, "query", dim, dim, true),
            key: Linear::new(pb, "key", dim, dim, true),
            value: Linear::new(pb, "value", dim, dim, true),
            output: Linear::new(pb, "output", dim, dim, true),
            heads,
        })
    }

    /// `key_mask[j] == false` excludes position `j` from every query's
    /// attention distribution.
    pub fn forward(&self, g: &mut Graph, x: Var, key_mask: Option<&[bool]>) -> AttentionOutput {
        let dim = self.query.out_dim;
        let head_dim = dim / self.heads;
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim);
            let kh = g.slice_cols(k, h * head_dim, head_dim);
            let vh = g.slice_cols(v, h * head_dim, head_dim);
            let kt = g.transpose(kh);
            let logits = g.matmul(qh, kt);
            let logits = g.scale(logits, scale);
            let w = g.softmax_rows(logits, key_mask);
            outs.push(g.matmul(w, vh));
            weights.push(w);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        AttentionOutput {
            output: self.output.forward(g, joined),
            weights,
        }
    }
}

/// Single-direction LSTM with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input: Linear,
    pub recurrent: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| {
            let input = Linear::new(pb, "input", in_dim, 4 * hidden, true);
            let bias = input.bias.expect("lstm input projection has a bias");
            pb.store
                .get_mut(bias)
                .slice_mut(ndarray::s![.., hidden..2 * hidden])
                .fill(1.0);
            Self {
                input,
                recurrent: pb.uniform("recurrent", hidden, 4 * hidden, hidden),
                hidden,
            }
        })
    }

    /// Runs over the rows of `x` (forwards, or backwards when `reverse`) and
    /// returns the hidden states in the original row order.
    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let steps = g.shape(x).0;
        let n = self.hidden;
        let projected = self.input.forward(g, x);
        let recurrent = g.param(self.recurrent);
        let mut h = g.constant(Array2::zeros((1, n)));
        let mut c = g.constant(Array2::zeros((1, n)));
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let xt = g.slice_rows(projected, t, 1);
            let ht = g.matmul(h, recurrent);
            let gates = g.add(xt, ht);
            let i = g.slice_cols(gates, 0, n);
            let f = g.slice_cols(gates, n, n);
            let cand = g.slice_cols(gates, 2 * n, n);
            let o = g.slice_cols(gates, 3 * n, n);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let cand = g.tanh(cand);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            states[t] = h;
        }
        g.concat_rows(&states)
    }
}

/// Row mask as a `rows x width` matrix of ones and zeros.
pub fn row_mask(mask: &[bool], width: usize) -> Array2<f64> {
    Array2::from_shape_fn((mask.len(), width), |(r, _)| if mask[r] { 1.0 } else { 0.0 })
}
