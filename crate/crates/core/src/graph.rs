//! A small tape-based reverse-mode autodiff engine over `f64` matrices.
//!
//! Every value is a 2-D matrix; vectors are `1 x n` rows. Nodes are appended
//! in evaluation order, so walking the tape backwards is a valid reverse
//! topological order. Parameters enter the tape by reference and their
//! gradients are collected into a [`Gradients`] aligned with the store.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::Mat;

/// Logit assigned to masked-out attention keys.
pub const MASKED_LOGIT: f64 = -1e9;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Mat),
    Borrowed(&'a Mat),
}

impl Value<'_> {
    fn get(&self) -> &Mat {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Mat),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Mish(Var),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    Standardize(Var, Vec<f64>),
    MeanRows(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Unfold(Var, usize),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
}

/// Evaluation tape. Build one per forward pass.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: Option<&'a ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'a> Graph<'a> {
    /// Inference tape: dropout is the identity.
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params),
            param_vars: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Training tape: dropout masks are drawn from a generator seeded with `seed`.
    pub fn training(params: &'a ParamStore, seed: u64) -> Self {
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new(params)
        }
    }

    /// Tape without parameters, for constant-only computations.
    pub fn detached() -> Graph<'static> {
        Graph {
            nodes: Vec::new(),
            params: None,
            param_vars: HashMap::new(),
            dropout_rng: None,
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn column(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    /// Tape node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Borrowed(store.get(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + r` with the `1 x n` row `r` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        assert_eq!(self.shape(r).0, 1, "add_row expects a single row");
        let out = self.value(a) + self.value(r);
        self.push(out, Op::AddRow(a, r))
    }

    /// `a * r` with the `1 x n` row `r` broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        assert_eq!(self.shape(r).0, 1, "mul_row expects a single row");
        let out = self.value(a) * self.value(r);
        self.push(out, Op::MulRow(a, r))
    }

    /// `scale * a + shift` elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).mapv(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Elementwise product with a fixed matrix (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(logistic);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// `x * tanh(softplus(x))`.
    pub fn mish(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * softplus(x).tanh());
        self.push(out, Op::Mish(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Row-wise softmax. Columns whose `key_mask` entry is false get the
    /// logit [`MASKED_LOGIT`] and so receive zero weight.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        let mut out = self.value(a).clone();
        if let Some(mask) = key_mask {
            assert_eq!(mask.len(), out.ncols());
            for mut row in out.rows_mut() {
                for (x, &keep) in row.iter_mut().zip(mask) {
                    if !keep {
                        *x = MASKED_LOGIT;
                    }
                }
            }
        }
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)` with the
    /// population variance.
    pub fn standardize(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut sigmas = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sigma = (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) / sigma);
            sigmas.push(sigma);
        }
        self.push(out, Op::Standardize(a, sigmas))
    }

    /// Column means, `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = (x.sum_axis(Axis(0)) / x.nrows() as f64).insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    /// Builds a matrix whose row `r` is row `indices[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), indices);
        self.push(out, Op::GatherRows(a, indices.to_vec()))
    }

    /// Sliding-window unfold for a same-padded 1-D convolution over rows:
    /// `T x C -> T x (kernel * C)`, where block `j` of output row `t` is input
    /// row `t + j - (kernel - 1) / 2` (zeros outside the sequence).
    pub fn unfold(&mut self, a: Var, kernel: usize) -> Var {
        let x = self.value(a);
        let (t, c) = x.dim();
        let pad = (kernel - 1) / 2;
        let mut out = Array2::zeros((t, kernel * c));
        for row in 0..t {
            for j in 0..kernel {
                let src = row as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    out.slice_mut(s![row, j * c..(j + 1) * c])
                        .assign(&x.row(src as usize));
                }
            }
        }
        self.push(out, Op::Unfold(a, kernel))
    }

    /// Inverted dropout; identity on inference tapes or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 {
            return a;
        }
        let dim = self.shape(a);
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        let keep = 1.0 - p;
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.mul_const(a, mask)
    }

    /// Sign pattern of every ReLU and |x| input on the tape. Two evaluations
    /// with equal signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::Abs(a) = node.op {
                sig.extend(self.value(a).iter().map(|&x| x > 0.0));
            }
        }
        sig
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every parameter.
    /// Parameters that do not reach `loss` get exact zeros.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let store = self.params.expect("graph has no parameter store");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.get();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.grads[id.index()] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*r);
                    accumulate(&mut grads, *r, gr);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Affine(a, scale) => accumulate(&mut grads, *a, g * *scale),
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g * c),
                Op::Tanh(a) => {
                    let ga = ndarray::Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = ndarray::Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = ndarray::Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mish(a) => {
                    let ga = ndarray::Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| g * mish_grad(x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = ndarray::Zip::from(&g).and(self.value(*a)).map_collect(|&g, &x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = ndarray::Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| 2.0 * x * g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let mut ga = Array2::zeros(y.dim());
                    for ((gr, yr), mut out) in g.rows().into_iter().zip(y.rows()).zip(ga.rows_mut()) {
                        let dot: f64 = gr.iter().zip(yr.iter()).map(|(g, y)| g * y).sum();
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Standardize(a, sigmas) => {
                    let n = y.ncols() as f64;
                    let mut ga = Array2::zeros(y.dim());
                    for (((gr, yr), mut out), &sigma) in
                        g.rows().into_iter().zip(y.rows()).zip(ga.rows_mut()).zip(sigmas)
                    {
                        let mean_g = gr.sum() / n;
                        let mean_gy: f64 = gr.iter().zip(yr.iter()).map(|(g, y)| g * y).sum::<f64>() / n;
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *o = (gv - mean_g - yv * mean_gy) / sigma;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let rows = self.shape(*a).0;
                    let ga = Array2::from_shape_fn((rows, g.ncols()), |(_, c)| g[[0, c]] / rows as f64);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        accumulate(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        accumulate(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, &i) in indices.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Unfold(a, kernel) => {
                    let (t, c) = self.shape(*a);
                    let pad = (kernel - 1) / 2;
                    let mut ga = Array2::zeros((t, c));
                    for row in 0..t {
                        for j in 0..*kernel {
                            let src = row as isize + j as isize - pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let mut dst = ga.row_mut(src as usize);
                                dst += &g.slice(s![row, j * c..(j + 1) * c]);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * logistic(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamBuilder;

    /// Central differences of `f` with respect to every entry of every
    /// parameter, compared against the tape's gradients.
    fn check(store: &ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(store);
            let loss = f(&mut g);
            g.backward(loss)
        };
        let h = 1e-6;
        let mut work = store.clone();
        for (id, name, value) in store.iter() {
            for idx in 0..value.len() {
                let (r, c) = (idx / value.ncols(), idx % value.ncols());
                let orig = value[[r, c]];
                work.get_mut(id)[[r, c]] = orig + h;
                let plus = {
                    let mut g = Graph::new(&work);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                work.get_mut(id)[[r, c]] = orig - h;
                let minus = {
                    let mut g = Graph::new(&work);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                work.get_mut(id)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.get(id)[[r, c]];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "{name}[{r},{c}]: analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    fn store(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut b = ParamBuilder::new(42);
        for &(n, r, c) in shapes {
            b.uniform(n, r, c, 1);
        }
        b.finish()
    }

    #[test]
    fn matmul_transpose_and_broadcasts() {
        let s = store(&[("a", 3, 4), ("b", 4, 2), ("r", 1, 2), ("m", 1, 2)]);
        let (a, b, r, m) = (s.id("a").unwrap(), s.id("b").unwrap(), s.id("r").unwrap(), s.id("m").unwrap());
        check(&s, |g| {
            let (a, b, r, m) = (g.param(a), g.param(b), g.param(r), g.param(m));
            let x = g.matmul(a, b);
            let x = g.add_row(x, r);
            let x = g.mul_row(x, m);
            let t = g.transpose(x);
            let y = g.matmul(x, t);
            let y = g.square(y);
            g.sum_all(y)
        });
    }

    #[test]
    fn elementwise_nonlinearities() {
        let s = store(&[("x", 3, 5), ("y", 3, 5)]);
        let (x, y) = (s.id("x").unwrap(), s.id("y").unwrap());
        check(&s, |g| {
            let (x, y) = (g.param(x), g.param(y));
            let a = g.tanh(x);
            let b = g.sigmoid(y);
            let c = g.mish(x);
            let d = g.mul(a, b);
            let e = g.sub(d, c);
            let e = g.affine(e, 1.7, -0.3);
            let f = g.add(e, y);
            let f = g.mul_const(f, Array2::from_elem((3, 5), 0.5));
            let f = g.square(f);
            g.sum_all(f)
        });
    }

    #[test]
    fn softmax_standardize_and_reductions() {
        let s = store(&[("x", 4, 6), ("w", 6, 6)]);
        let (x, w) = (s.id("x").unwrap(), s.id("w").unwrap());
        let mask = [true, true, false, true, true, false];
        check(&s, |g| {
            let (x, w) = (g.param(x), g.param(w));
            let z = g.standardize(x, 1e-8);
            let z = g.matmul(z, w);
            let p = g.softmax_rows(z, Some(&mask));
            let p = g.mul(p, z);
            let m = g.mean_rows(p);
            let m = g.square(m);
            g.sum_all(m)
        });
    }

    #[test]
    fn structural_ops() {
        let s = store(&[("x", 5, 3), ("y", 5, 2)]);
        let (x, y) = (s.id("x").unwrap(), s.id("y").unwrap());
        check(&s, |g| {
            let (x, y) = (g.param(x), g.param(y));
            let c = g.concat_cols(&[x, y]);
            let a = g.slice_cols(c, 1, 3);
            let b = g.slice_rows(c, 2, 2);
            let r = g.concat_rows(&[a, a]);
            let u = g.unfold(r, 3);
            let gth = g.gather_rows(b, &[0, 0, 1, 1, 1]);
            let gth = g.slice_cols(gth, 0, 3);
            let u = g.slice_rows(u, 0, 5);
            let u = g.slice_cols(u, 2, 3);
            let p = g.mul(u, gth);
            let p = g.square(p);
            g.sum_all(p)
        });
    }

    #[test]
    fn abs_and_relu_away_from_kinks() {
        let mut s = ParamStore::new();
        s.insert("x", Array2::from_shape_vec((1, 4), vec![-0.7, 0.3, 1.2, -2.0]).unwrap());
        let x = s.id("x").unwrap();
        check(&s, |g| {
            let x = g.param(x);
            let a = g.abs(x);
            let r = g.relu(x);
            let p = g.mul(a, r);
            let q = g.add(p, a);
            g.sum_all(q)
        });
    }

    #[test]
    fn unused_parameters_get_zero_gradients() {
        let s = store(&[("used", 2, 2), ("unused", 2, 2)]);
        let used = s.id("used").unwrap();
        let mut g = Graph::new(&s);
        let u = g.param(used);
        let l = g.sum_all(u);
        let grads = g.backward(l);
        assert!(grads.by_name(&s, "unused").unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.by_name(&s, "used").unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let mut g = Graph::detached();
        let x = g.constant(Array2::from_shape_fn((3, 4), |(i, j)| (i * j) as f64 - 2.0));
        let p = g.softmax_rows(x, Some(&[true, false, true, true]));
        for row in g.value(p).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert_eq!(row[1], 0.0);
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Array2::ones((4, 4)));
        assert_eq!(g.dropout(x, 0.5), x);
        let mut t = Graph::training(&s, 1);
        let x = t.constant(Array2::ones((50, 50)));
        let d = t.dropout(x, 0.5);
        let vals = t.value(d);
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((1000..1500).contains(&kept));
    }
}
