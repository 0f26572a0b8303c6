//! Teacher-forced training steps.

use crate::data::{FeatureStats, TrainingExample};
use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::loss::{loss_graph, LossBreakdown, Targets};
use crate::model::DsTts;
use crate::optim::{Adam, AdamConfig};
use crate::params::Gradients;

pub struct Trainer {
    pub model: DsTts,
    pub optimizer: Adam,
    pub stats: FeatureStats,
    pub seed: u64,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: DsTts, adam: AdamConfig, stats: FeatureStats, seed: u64) -> Self {
        let optimizer = Adam::new(adam, &model.params);
        Self {
            model,
            optimizer,
            stats,
            seed,
            step: 0,
        }
    }

    /// Loss and gradients for a batch. Dropout masks are drawn from `seed`
    /// when given; otherwise the pass is deterministic.
    pub fn loss_and_gradients(&self, batch: &[TrainingExample], dropout_seed: Option<u64>) -> Result<(LossBreakdown, Gradients)> {
        batch_loss(&self.model, &self.stats, batch, dropout_seed)
    }

    /// Forward, backward and one Adam update. Returns the loss measured
    /// before the update; non-finite losses abort without changing anything.
    pub fn train_step(&mut self, batch: &[TrainingExample]) -> Result<LossBreakdown> {
        let dropout_seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.step);
        let (loss, grads) = self.loss_and_gradients(batch, Some(dropout_seed))?;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite(format!("loss at step {}", self.step + 1)));
        }
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(loss)
    }

    /// Loss without dropout and without updating.
    pub fn evaluate(&self, batch: &[TrainingExample]) -> Result<LossBreakdown> {
        eval_loss(&self.model, &self.stats, batch)
    }
}

pub fn batch_loss(model: &DsTts, stats: &FeatureStats, batch: &[TrainingExample], dropout_seed: Option<u64>) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(CoreError::Empty("training batch".into()));
    }
    let mut g = match dropout_seed {
        Some(seed) => Graph::training(&model.params, seed),
        None => Graph::new(&model.params),
    };
    let mut outputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        outputs.push(model.forward_teacher(&mut g, ex, stats)?);
        targets.push(Targets::from_example(ex, stats));
    }
    let vars = loss_graph(&mut g, &outputs, &targets)?;
    let loss = vars.breakdown(&g);
    let grads = g.backward(vars.total);
    Ok((loss, grads))
}

pub fn eval_loss(model: &DsTts, stats: &FeatureStats, batch: &[TrainingExample]) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.params);
    let mut outputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for ex in batch {
        outputs.push(model.forward_teacher(&mut g, ex, stats)?);
        targets.push(Targets::from_example(ex, stats));
    }
    Ok(loss_graph(&mut g, &outputs, &targets)?.breakdown(&g))
}
