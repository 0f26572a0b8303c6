//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::{Gradients, ParamStore};
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Mat::zeros(p.dim())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Rejects mismatched shapes and non-finite gradients
    /// before touching any parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.grads.len() != params.len() || self.m.len() != params.len() {
            return Err(CoreError::Shape(format!(
                "{} gradients and {} moments for {} parameters",
                grads.grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for ((id, name, p), g) in params.iter().zip(&grads.grads) {
            if p.dim() != g.dim() || self.m[id.index()].dim() != p.dim() {
                return Err(CoreError::Shape(format!("gradient for {name}: {:?} vs {:?}", g.dim(), p.dim())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.values_mut().zip(&grads.grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
