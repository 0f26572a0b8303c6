//! Central finite-difference validation of tape gradients.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStats, TrainingExample};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::loss::{loss_graph, Targets};
use crate::model::{DsTts, ModelConfig};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries compared per tensor; smaller tensors are checked in full.
    pub entries_per_tensor: usize,
    pub seed: u64,
    /// Target relative error; sets the resolution floor below.
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            entries_per_tensor: 32,
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst_pair: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Same comparison with the fixed `1e-6` denominator floor only.
    pub max_rel_error_strict: f64,
    /// Denominator floor used for `max_rel_error`.
    pub floor: f64,
    pub worst_tensor: String,
    pub tensors: Vec<TensorCheck>,
    /// Entries passed over because a perturbation crossed a ReLU or |x| kink.
    pub skipped_kinks: usize,
}

pub const MIN_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor matched to the oracle's resolution. A central
/// difference of a loss `L` carries rounding noise of order `eps |L| / h`,
/// so gradients whose size puts ten times that noise above `tolerance` in
/// relative terms cannot be resolved and are compared in absolute terms.
pub fn resolution_floor(loss: f64, step: f64, tolerance: f64) -> f64 {
    let noise = 10.0 * f64::EPSILON * loss.abs().max(1.0) / step;
    (noise / tolerance).max(MIN_FLOOR)
}

/// Compares the tape gradient of the scalar built by `f` with central
/// differences. `corrupt` multiplies the analytic gradient of one named
/// tensor before comparison, to exercise the detector.
pub fn check_gradients<F>(store: &ParamStore, opts: &GradCheckOptions, corrupt: Option<(&str, f64)>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let (mut analytic, base_sig, base_loss) = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        (g.backward(loss), g.kink_signature(), g.scalar(loss))
    };
    let floor = resolution_floor(base_loss, opts.step, opts.tolerance);
    let mut strict: f64 = 0.0;
    if let Some((name, factor)) = corrupt {
        let id = store
            .id(name)
            .ok_or_else(|| CoreError::Config(format!("unknown tensor {name}")))?;
        analytic.grads[id.index()].mapv_inplace(|v| v * factor);
    }
    let evaluate = |work: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new(work);
        let loss = f(&mut g)?;
        Ok((g.scalar(loss), g.kink_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut tensors = Vec::with_capacity(store.len());
    let mut skipped = 0;
    for (id, name, value) in store.iter() {
        let mut order: Vec<usize> = (0..value.len()).collect();
        order.shuffle(&mut rng);
        let want = opts.entries_per_tensor.min(value.len());
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        let mut worst_pair = (0.0, 0.0);
        for idx in order {
            if checked == want {
                break;
            }
            let (r, c) = (idx / value.ncols(), idx % value.ncols());
            let orig = value[[r, c]];
            work.get_mut(id)[[r, c]] = orig + opts.step;
            let (plus, sig_plus) = evaluate(&work)?;
            work.get_mut(id)[[r, c]] = orig - opts.step;
            let (minus, sig_minus) = evaluate(&work)?;
            work.get_mut(id)[[r, c]] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id)[[r, c]];
            let err = relative_error(a, numeric, floor);
            strict = strict.max(relative_error(a, numeric, MIN_FLOOR));
            if err > worst {
                worst = err;
                worst_pair = (a, numeric);
            }
            checked += 1;
        }
        tensors.push(TensorCheck {
            name: name.to_string(),
            checked,
            max_rel_error: worst,
            worst_pair,
        });
    }
    let (max_rel_error, worst_tensor) = tensors
        .iter()
        .fold((0.0, String::new()), |(m, n), t| {
            if t.max_rel_error > m {
                (t.max_rel_error, t.name.clone())
            } else {
                (m, n)
            }
        });
    Ok(GradCheckReport {
        max_rel_error,
        max_rel_error_strict: strict,
        floor,
        worst_tensor,
        tensors,
        skipped_kinks: skipped,
    })
}

/// Gradient check of the full teacher-forced training loss, with dropout
/// disabled.
pub fn grad_check(model: &DsTts, stats: &FeatureStats, batch: &[TrainingExample], opts: &GradCheckOptions, corrupt: Option<(&str, f64)>) -> Result<GradCheckReport> {
    let targets: Vec<Targets> = batch.iter().map(|ex| Targets::from_example(ex, stats)).collect();
    check_gradients(&model.params, opts, corrupt, |g| {
        let mut outputs = Vec::with_capacity(batch.len());
        for ex in batch {
            outputs.push(model.forward_teacher(g, ex, stats)?);
        }
        Ok(loss_graph(g, &outputs, &targets)?.total)
    })
}

/// Random but well-formed utterance: log-mel in a speech-like range,
/// unit-norm MFCC frames, plausible pitch and energy.
pub fn synthetic_example(id: &str, phonemes: usize, vocab: usize, seed: u64) -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..phonemes).map(|_| rng.random_range(1..vocab)).collect();
    let durations: Vec<usize> = (0..phonemes).map(|_| rng.random_range(1..4)).collect();
    let frames: usize = durations.iter().sum();
    let mel = Array2::from_shape_fn((frames, dstts_dsp::N_MELS), |_| rng.random_range(-8.0..1.0));
    let mut mfcc: Array2<f64> = Array2::from_shape_fn((frames, dstts_dsp::N_MFCC), |_| rng.random_range(-1.0..1.0));
    for mut row in mfcc.rows_mut() {
        let n: f64 = row.dot(&row).sqrt();
        row /= n;
    }
    TrainingExample {
        id: id.into(),
        pitch: (0..phonemes)
            .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(90.0..220.0) })
            .collect(),
        energy: (0..phonemes).map(|_| rng.random_range(0.5..20.0)).collect(),
        phonemes: ids,
        durations,
        mel,
        mfcc,
    }
}

pub fn stats_for(batch: &[TrainingExample]) -> FeatureStats {
    let pitch: Vec<f64> = batch.iter().flat_map(|e| e.pitch.clone()).collect();
    let energy: Vec<f64> = batch.iter().flat_map(|e| e.energy.clone()).collect();
    FeatureStats::from_values(&pitch, &energy)
}

/// The tiny model with a vocabulary of five and two synthetic utterances,
/// one on each side of the routing threshold.
pub fn tiny_fixture(seed: u64) -> Result<(DsTts, FeatureStats, Vec<TrainingExample>)> {
    let config = ModelConfig {
        dva_threshold: 4,
        ..ModelConfig::tiny(5)
    };
    let model = DsTts::new(config, seed)?;
    let batch = vec![
        synthetic_example("short", 3, 5, seed.wrapping_add(1)),
        synthetic_example("long", 6, 5, seed.wrapping_add(2)),
    ];
    let stats = stats_for(&batch);
    Ok((model, stats, batch))
}
