//! Training objective: mel MAE plus three variance MSE terms.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureStats, TrainingExample};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::model::ForwardOutput;
use crate::Mat;

/// `(1/n) * sum (z_i - z'_i)^2`.
pub fn mse(z: &[f64], z_hat: &[f64]) -> Result<f64> {
    if z.len() != z_hat.len() {
        return Err(CoreError::Shape(format!("mse over {} and {} values", z.len(), z_hat.len())));
    }
    if z.is_empty() {
        return Err(CoreError::Empty("mse of no values".into()));
    }
    Ok(z.iter().zip(z_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64)
}

/// Mean absolute difference over all cells.
pub fn mel_mae(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(CoreError::Shape(format!("mel {:?} vs {:?}", pred.dim(), target.dim())));
    }
    if pred.is_empty() {
        return Err(CoreError::Empty("mel of no frames".into()));
    }
    Ok((pred - target).mapv(f64::abs).sum() / pred.len() as f64)
}

pub fn log_duration(d: &[usize]) -> Vec<f64> {
    d.iter().map(|&d| (d as f64).ln_1p()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub l_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Sums the components in the fixed order `((l_rec + l_d) + l_e) + l_p`.
    pub fn new(l_rec: f64, l_d: f64, l_e: f64, l_p: f64) -> Self {
        Self {
            l_rec,
            l_d,
            l_e,
            l_p,
            total: l_rec + l_d + l_e + l_p,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_d, self.l_e, self.l_p, self.total].iter().all(|v| v.is_finite())
    }
}

/// Plain-value model outputs for one utterance. Pitch and energy are
/// standardised; duration is in the `ln(1 + frames)` domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub mel: Mat,
    pub log_duration: Vec<f64>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Supervision for one utterance with pitch and energy already
/// standardised.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub mel: Mat,
    pub durations: Vec<usize>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

impl Targets {
    pub fn from_example(ex: &TrainingExample, stats: &FeatureStats) -> Self {
        Self {
            mel: ex.mel.clone(),
            durations: ex.durations.clone(),
            pitch: stats.standardize_pitch(&ex.pitch),
            energy: stats.standardize_energy(&ex.energy),
        }
    }
}

fn pooled<T>(items: &[T], mut f: impl FnMut(&T) -> Result<(f64, usize)>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for item in items {
        let (s, n) = f(item)?;
        sum += s;
        count += n;
    }
    if count == 0 {
        return Err(CoreError::Empty("loss over an empty batch".into()));
    }
    Ok(sum / count as f64)
}

/// Batch losses with every mean pooled over all cells of the batch.
pub fn compute_losses(pairs: &[(Predictions, Targets)]) -> Result<LossBreakdown> {
    let l_rec = pooled(pairs, |(p, t)| Ok((mel_mae(&p.mel, &t.mel)? * p.mel.len() as f64, p.mel.len())))?;
    let sq = |a: &[f64], b: &[f64]| -> Result<(f64, usize)> { Ok((mse(a, b)? * a.len() as f64, a.len())) };
    let l_d = pooled(pairs, |(p, t)| sq(&p.log_duration, &log_duration(&t.durations)))?;
    let l_e = pooled(pairs, |(p, t)| sq(&p.energy, &t.energy))?;
    let l_p = pooled(pairs, |(p, t)| sq(&p.pitch, &t.pitch))?;
    Ok(LossBreakdown::new(l_rec, l_d, l_e, l_p))
}

/// Loss nodes on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_rec: Var,
    pub l_d: Var,
    pub l_e: Var,
    pub l_p: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let b = LossBreakdown::new(g.scalar(self.l_rec), g.scalar(self.l_d), g.scalar(self.l_e), g.scalar(self.l_p));
        debug_assert_eq!(b.total.to_bits(), g.scalar(self.total).to_bits());
        b
    }
}

/// Tape version of [`compute_losses`] for teacher-forced outputs.
pub fn loss_graph(g: &mut Graph, outputs: &[ForwardOutput], targets: &[Targets]) -> Result<LossVars> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(CoreError::Shape(format!("{} outputs for {} targets", outputs.len(), targets.len())));
    }
    let mut rec = Vec::new();
    let mut dur = Vec::new();
    let mut eng = Vec::new();
    let mut pit = Vec::new();
    let (mut cells, mut phonemes) = (0usize, 0usize);
    for (out, t) in outputs.iter().zip(targets) {
        if g.shape(out.mel) != t.mel.dim() {
            return Err(CoreError::Shape(format!("mel {:?} vs target {:?}", g.shape(out.mel), t.mel.dim())));
        }
        cells += t.mel.len();
        phonemes += t.durations.len();
        let target = g.constant(t.mel.clone());
        let diff = g.sub(out.mel, target);
        let abs = g.abs(diff);
        rec.push(g.sum_all(abs));
        let p = &out.adaptor.predictions;
        for (pred, values, acc) in [
            (p.log_duration, log_duration(&t.durations), &mut dur),
            (p.energy, t.energy.clone(), &mut eng),
            (p.pitch, t.pitch.clone(), &mut pit),
        ] {
            let target = g.column(&values);
            let diff = g.sub(pred, target);
            let sq = g.square(diff);
            acc.push(g.sum_all(sq));
        }
    }
    let mean = |g: &mut Graph, parts: &[Var], n: usize| {
        let joined = if parts.len() == 1 { parts[0] } else { g.concat_rows(parts) };
        let s = g.sum_all(joined);
        g.scale(s, 1.0 / n as f64)
    };
    let l_rec = mean(g, &rec, cells);
    let l_d = mean(g, &dur, phonemes);
    let l_e = mean(g, &eng, phonemes);
    let l_p = mean(g, &pit, phonemes);
    let t = g.add(l_rec, l_d);
    let t = g.add(t, l_e);
    let total = g.add(t, l_p);
    Ok(LossVars {
        l_rec,
        l_d,
        l_e,
        l_p,
        total,
    })
}
