//! Style Gating-FiLM: standardise each hidden vector, then scale and shift
//! it with style-dependent parameters gated between a FiLM pair and a
//! shared fallback.
//!
//! With `y = (h - mean) / sqrt(var + EPS)`:
//!
//! ```text
//! gamma, beta, eta = tanh(style W_* + b_*)
//! delta            = logistic(style W_d + b_d)
//! gamma_eff        = gamma * delta + eta * (1 - delta)
//! beta_eff         = beta  * delta + eta * (1 - delta)
//! out              = gamma_eff * y + beta_eff
//! ```

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{CoreError, Result};
use crate::graph::{logistic, Graph, Var};
use crate::nn::Linear;
use crate::params::{ParamBuilder, ParamStore};

/// Variance guard inside the square root.
pub const EPS: f64 = 1e-8;

/// Initial bias of the gate projection.
pub const DELTA_BIAS_INIT: f64 = 1.0;

/// Standardises `h` with the population variance.
pub fn normalize(h: &[f64]) -> Vec<f64> {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = (var + EPS).sqrt();
    h.iter().map(|v| (v - mean) / sigma).collect()
}

/// Plain-value copy of one SGF layer's four projections. Weights are
/// `[style_dim, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgfLayerParams {
    pub gamma: (Array2<f64>, Array1<f64>),
    pub beta: (Array2<f64>, Array1<f64>),
    pub eta: (Array2<f64>, Array1<f64>),
    pub delta: (Array2<f64>, Array1<f64>),
}

impl SgfLayerParams {
    /// Zero weights with the standard biases.
    pub fn initial(style_dim: usize, hidden: usize) -> Self {
        let zero = || (Array2::zeros((style_dim, hidden)), Array1::zeros(hidden));
        Self {
            gamma: zero(),
            beta: zero(),
            eta: zero(),
            delta: (
                Array2::zeros((style_dim, hidden)),
                Array1::from_elem(hidden, DELTA_BIAS_INIT),
            ),
        }
    }

    pub fn style_dim(&self) -> usize {
        self.gamma.0.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.gamma.0.ncols()
    }
}

/// Activated projections of a style vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SgfProjection {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
}

fn affine(style: ArrayView1<f64>, p: &(Array2<f64>, Array1<f64>)) -> Array1<f64> {
    style.dot(&p.0) + &p.1
}

pub fn sgf_project(style: &[f64], params: &SgfLayerParams) -> Result<SgfProjection> {
    if style.len() != params.style_dim() {
        return Err(CoreError::Shape(format!(
            "style vector has {} entries, layer expects {}",
            style.len(),
            params.style_dim()
        )));
    }
    let s = ArrayView1::from(style);
    Ok(SgfProjection {
        gamma: affine(s, &params.gamma).mapv(f64::tanh).to_vec(),
        beta: affine(s, &params.beta).mapv(f64::tanh).to_vec(),
        eta: affine(s, &params.eta).mapv(f64::tanh).to_vec(),
        delta: affine(s, &params.delta).mapv(logistic).to_vec(),
    })
}

/// Returns `(gamma_eff, beta_eff)`.
pub fn sgf_blend(p: &SgfProjection) -> (Vec<f64>, Vec<f64>) {
    let blend = |a: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(&p.eta)
            .zip(&p.delta)
            .map(|((a, e), d)| a * d + e * (1.0 - d))
            .collect()
    };
    (blend(&p.gamma), blend(&p.beta))
}

/// Applies the blended scale and shift to an already standardised vector.
pub fn film(y: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    y.iter().zip(gamma).zip(beta).map(|((y, g), b)| g * y + b).collect()
}

pub fn sgf_modulate(h: &[f64], style: &[f64], params: &SgfLayerParams) -> Result<Vec<f64>> {
    if h.len() != params.hidden() {
        return Err(CoreError::Shape(format!(
            "hidden vector has {} entries, layer expects {}",
            h.len(),
            params.hidden()
        )));
    }
    let (gamma, beta) = sgf_blend(&sgf_project(style, params)?);
    Ok(film(&normalize(h), &gamma, &beta))
}

/// Tape version of the layer, applied to every row of a sequence.
#[derive(Debug, Clone)]
pub struct SgfLayer {
    pub gamma: Linear,
    pub beta: Linear,
    pub eta: Linear,
    pub delta: Linear,
}

impl SgfLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, style_dim: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| {
            let layer = Self {
                gamma: Linear::new(pb, "gamma", style_dim, hidden, true),
                beta: Linear::new(pb, "beta", style_dim, hidden, true),
                eta: Linear::new(pb, "eta", style_dim, hidden, true),
                delta: Linear::new(pb, "delta", style_dim, hidden, true),
            };
            pb.store.get_mut(layer.delta.bias.unwrap()).fill(DELTA_BIAS_INIT);
            layer
        })
    }

    fn linears(&self) -> [&Linear; 4] {
        [&self.gamma, &self.beta, &self.eta, &self.delta]
    }

    /// Overwrites this layer's tensors in `store` with `params`.
    pub fn load(&self, store: &mut ParamStore, params: &SgfLayerParams) {
        let parts = [&params.gamma, &params.beta, &params.eta, &params.delta];
        for (lin, (w, b)) in self.linears().into_iter().zip(parts) {
            store.get_mut(lin.weight).assign(w);
            store
                .get_mut(lin.bias.unwrap())
                .assign(&b.view().insert_axis(ndarray::Axis(0)));
        }
    }

    pub fn params(&self, store: &ParamStore) -> SgfLayerParams {
        let get = |lin: &Linear| {
            (
                store.get(lin.weight).clone(),
                store.get(lin.bias.unwrap()).row(0).to_owned(),
            )
        };
        SgfLayerParams {
            gamma: get(&self.gamma),
            beta: get(&self.beta),
            eta: get(&self.eta),
            delta: get(&self.delta),
        }
    }

    /// `h` is `L x H`, `style` is `1 x style_dim`.
    pub fn forward(&self, g: &mut Graph, h: Var, style: Var) -> Var {
        let y = g.standardize(h, EPS);
        let gamma = self.gamma.forward(g, style);
        let gamma = g.tanh(gamma);
        let beta = self.beta.forward(g, style);
        let beta = g.tanh(beta);
        let eta = self.eta.forward(g, style);
        let eta = g.tanh(eta);
        let delta = self.delta.forward(g, style);
        let delta = g.sigmoid(delta);
        let rest = g.affine(delta, -1.0, 1.0);
        let eta_part = g.mul(eta, rest);
        let gd = g.mul(gamma, delta);
        let gamma_eff = g.add(gd, eta_part);
        let bd = g.mul(beta, delta);
        let beta_eff = g.add(bd, eta_part);
        let scaled = g.mul_row(y, gamma_eff);
        g.add_row(scaled, beta_eff)
    }
}
