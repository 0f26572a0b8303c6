//! Length-routed variance adaptor: duration, pitch and energy predictors in
//! a short-sequence and a long-sequence variant, the length regulator, and
//! additive re-injection of pitch and energy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv1d, LayerNorm, Linear};
use crate::params::ParamBuilder;

pub const DEFAULT_THRESHOLD: usize = 85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Short,
    Long,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Short => "Short",
            Branch::Long => "Long",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub branch: Branch,
    pub sequence_length: usize,
    pub threshold: usize,
}

/// Short iff `length <= threshold`.
pub fn route(length: usize, threshold: usize) -> RoutingDecision {
    RoutingDecision {
        branch: if length <= threshold { Branch::Short } else { Branch::Long },
        sequence_length: length,
        threshold,
    }
}

/// Branch ablations: removing one predictor family sends everything to
/// the other.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoutingOverride {
    pub no_short: bool,
    pub no_long: bool,
}

impl RoutingOverride {
    pub fn route(self, length: usize, threshold: usize) -> RoutingDecision {
        let mut d = route(length, threshold);
        if self.no_short {
            d.branch = Branch::Long;
        } else if self.no_long {
            d.branch = Branch::Short;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceKind {
    Duration,
    Pitch,
    Energy,
}

impl VarianceKind {
    pub const ALL: [VarianceKind; 3] = [VarianceKind::Duration, VarianceKind::Pitch, VarianceKind::Energy];

    fn name(self) -> &'static str {
        match self {
            VarianceKind::Duration => "duration",
            VarianceKind::Pitch => "pitch",
            VarianceKind::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone)]
pub enum PredictorHead {
    Linear(Linear),
    Conv(Conv1d),
}

/// Two conv/ReLU/norm/dropout stages and a scalar head.
#[derive(Debug, Clone)]
pub struct VariancePredictor {
    pub convs: [Conv1d; 2],
    pub norms: [LayerNorm; 2],
    pub head: PredictorHead,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorDims {
    pub hidden: usize,
    pub filter: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl VariancePredictor {
    pub fn new(pb: &mut ParamBuilder, name: &str, branch: Branch, d: &PredictorDims) -> Self {
        pb.scoped(name, |pb| Self {
            convs: [
                Conv1d::new(pb, "conv0", d.hidden, d.filter, d.kernel),
                Conv1d::new(pb, "conv1", d.filter, d.filter, d.kernel),
            ],
            norms: [LayerNorm::new(pb, "norm0", d.filter), LayerNorm::new(pb, "norm1", d.filter)],
            head: match branch {
                Branch::Long => PredictorHead::Linear(Linear::new(pb, "head", d.filter, 1, true)),
                Branch::Short => PredictorHead::Conv(Conv1d::new(pb, "head", d.filter, 1, d.kernel)),
            },
            dropout: d.dropout,
        })
    }

    /// `len x hidden` to a `len x 1` column.
    pub fn forward(&self, g: &mut Graph, h: Var) -> Var {
        let mut x = h;
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let y = conv.forward(g, x);
            let y = g.relu(y);
            let y = norm.forward(g, y);
            x = g.dropout(y, self.dropout);
        }
        match &self.head {
            PredictorHead::Linear(lin) => lin.forward(g, x),
            PredictorHead::Conv(conv) => conv.forward(g, x),
        }
    }
}

/// Repeats row `i` of `hidden` `durations[i]` times.
pub fn length_regulate(g: &mut Graph, hidden: Var, durations: &[usize]) -> Result<Var> {
    let rows = g.shape(hidden).0;
    if durations.len() != rows {
        return Err(CoreError::Shape(format!(
            "{} durations for {rows} phonemes",
            durations.len()
        )));
    }
    let index = expansion_index(durations);
    if index.is_empty() {
        return Err(CoreError::Empty("all durations are zero".into()));
    }
    Ok(g.gather_rows(hidden, &index))
}

/// Source row for every output frame of the length regulator.
pub fn expansion_index(durations: &[usize]) -> Vec<usize> {
    durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect()
}

/// Per-phoneme predictions, each a `len x 1` column.
#[derive(Debug, Clone, Copy)]
pub struct VarianceOutputs {
    pub log_duration: Var,
    pub pitch: Var,
    pub energy: Var,
}

/// Values injected into the frame sequence.
#[derive(Debug, Clone)]
pub enum AdaptorMode<'t> {
    /// Target durations and standardised per-phoneme pitch and energy.
    TeacherForced {
        durations: &'t [usize],
        pitch: &'t [f64],
        energy: &'t [f64],
    },
    Inference,
}

pub struct AdaptorOutput {
    pub frames: Var,
    pub predictions: VarianceOutputs,
    pub decision: RoutingDecision,
    pub durations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VarianceAdaptor {
    pub short: [VariancePredictor; 3],
    pub long: [VariancePredictor; 3],
    pub pitch_projection: Linear,
    pub energy_projection: Linear,
    pub max_duration: usize,
}

impl VarianceAdaptor {
    pub fn new(pb: &mut ParamBuilder, d: &PredictorDims, max_duration: usize) -> Self {
        pb.scoped("variance", |pb| {
            let make = |pb: &mut ParamBuilder, branch: Branch| {
                VarianceKind::ALL.map(|k| {
                    let name = format!("{}_{}", k.name(), branch.as_str().to_lowercase());
                    VariancePredictor::new(pb, &name, branch, d)
                })
            };
            Self {
                short: make(pb, Branch::Short),
                long: make(pb, Branch::Long),
                pitch_projection: Linear::new(pb, "pitch_projection", 1, d.hidden, true),
                energy_projection: Linear::new(pb, "energy_projection", 1, d.hidden, true),
                max_duration,
            }
        })
    }

    pub fn predictor(&self, kind: VarianceKind, branch: Branch) -> &VariancePredictor {
        let set = match branch {
            Branch::Short => &self.short,
            Branch::Long => &self.long,
        };
        &set[kind as usize]
    }

    pub fn predict(&self, g: &mut Graph, kind: VarianceKind, hidden: Var, decision: &RoutingDecision) -> Result<Var> {
        let rows = g.shape(hidden).0;
        if rows != decision.sequence_length {
            return Err(CoreError::Shape(format!(
                "hidden has {rows} rows, routing decision was for {}",
                decision.sequence_length
            )));
        }
        Ok(self.predictor(kind, decision.branch).forward(g, hidden))
    }

    /// `hidden + P(pitch) + E(energy)` for frame-level columns.
    pub fn apply_variances(&self, g: &mut Graph, hidden: Var, pitch: Var, energy: Var) -> Result<Var> {
        let rows = g.shape(hidden).0;
        if g.shape(pitch) != (rows, 1) || g.shape(energy) != (rows, 1) {
            return Err(CoreError::Shape(format!(
                "pitch {:?} and energy {:?} do not match {rows} frames",
                g.shape(pitch),
                g.shape(energy)
            )));
        }
        let p = self.pitch_projection.forward(g, pitch);
        let e = self.energy_projection.forward(g, energy);
        let x = g.add(hidden, p);
        Ok(g.add(x, e))
    }

    /// `round(exp(pred) - 1)`, at least one frame and at most `max_duration`.
    pub fn durations_from_log(&self, log_duration: &[f64]) -> Vec<usize> {
        log_duration
            .iter()
            .map(|&l| {
                let d = (l.exp() - 1.0).round();
                if d.is_nan() {
                    1
                } else {
                    d.clamp(1.0, self.max_duration as f64) as usize
                }
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, hidden: Var, decision: RoutingDecision, mode: AdaptorMode) -> Result<AdaptorOutput> {
        let predictions = VarianceOutputs {
            log_duration: self.predict(g, VarianceKind::Duration, hidden, &decision)?,
            pitch: self.predict(g, VarianceKind::Pitch, hidden, &decision)?,
            energy: self.predict(g, VarianceKind::Energy, hidden, &decision)?,
        };
        let rows = decision.sequence_length;
        let (durations, pitch, energy) = match mode {
            AdaptorMode::TeacherForced { durations, pitch, energy } => {
                if pitch.len() != rows || energy.len() != rows {
                    return Err(CoreError::Shape(format!(
                        "{} pitch and {} energy targets for {rows} phonemes",
                        pitch.len(),
                        energy.len()
                    )));
                }
                let p = g.column(pitch);
                let e = g.column(energy);
                (durations.to_vec(), p, e)
            }
            AdaptorMode::Inference => {
                let logs: Vec<f64> = g.value(predictions.log_duration).iter().copied().collect();
                (self.durations_from_log(&logs), predictions.pitch, predictions.energy)
            }
        };
        let frames = length_regulate(g, hidden, &durations)?;
        let pitch = length_regulate(g, pitch, &durations)?;
        let energy = length_regulate(g, energy, &durations)?;
        let frames = self.apply_variances(g, frames, pitch, energy)?;
        Ok(AdaptorOutput {
            frames,
            predictions,
            decision,
            durations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn zero_column(len: usize) -> Array2<f64> {
        Array2::zeros((len, 1))
    }
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DIMS: PredictorDims = PredictorDims {
        hidden: 8,
        filter: 8,
        kernel: 3,
        dropout: 0.5,
    };

    fn build() -> (VarianceAdaptor, ParamStore) {
        let mut pb = ParamBuilder::new(6);
        let a = VarianceAdaptor::new(&mut pb, &DIMS, 50);
        (a, pb.finish())
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn routing_boundary() {
        assert_eq!(route(85, 85).branch, Branch::Short);
        assert_eq!(route(86, 85).branch, Branch::Long);
        assert_eq!(route(1, 1).branch, Branch::Short);
        let sp = RoutingOverride { no_short: true, no_long: false };
        let lp = RoutingOverride { no_short: false, no_long: true };
        for len in 1..=200 {
            assert_eq!(sp.route(len, 85).branch, Branch::Long);
            assert_eq!(lp.route(len, 85).branch, Branch::Short);
        }
    }

    #[test]
    fn length_regulator_expands_in_order() {
        let mut g = Graph::detached();
        let h = g.constant(Array2::from_shape_fn((3, 2), |(r, _)| r as f64));
        let y = length_regulate(&mut g, h, &[2, 0, 3]).unwrap();
        let col: Vec<f64> = g.value(y).column(0).to_vec();
        assert_eq!(col, vec![0.0, 0.0, 2.0, 2.0, 2.0]);
        let id = length_regulate(&mut g, h, &[1, 1, 1]).unwrap();
        assert_eq!(g.value(id), g.value(h));
        assert!(length_regulate(&mut g, h, &[0, 0, 0]).is_err());
        assert!(length_regulate(&mut g, h, &[1, 1]).is_err());
    }

    #[test]
    fn predictors_have_expected_heads() {
        let (a, _) = build();
        for k in VarianceKind::ALL {
            assert!(matches!(a.predictor(k, Branch::Long).head, PredictorHead::Linear(_)));
            assert!(matches!(a.predictor(k, Branch::Short).head, PredictorHead::Conv(_)));
        }
    }

    #[test]
    fn predictions_have_one_value_per_phoneme() {
        let (a, store) = build();
        let mut g = Graph::new(&store);
        let h = g.constant(random(9, 8, 1));
        for (len, thr) in [(9, 85), (9, 4)] {
            let d = route(len, thr);
            for k in VarianceKind::ALL {
                let p = a.predict(&mut g, k, h, &d).unwrap();
                assert_eq!(g.shape(p), (9, 1));
            }
        }
        assert!(a.predict(&mut g, VarianceKind::Pitch, h, &route(8, 85)).is_err());
    }

    #[test]
    fn apply_variances_is_additive() {
        let (a, mut store) = build();
        store.get_mut(a.pitch_projection.bias.unwrap()).fill(0.0);
        store.get_mut(a.energy_projection.bias.unwrap()).fill(0.0);
        let mut g = Graph::new(&store);
        let h = g.constant(random(5, 8, 2));
        let zero = g.constant(zero_column(5));
        let same = a.apply_variances(&mut g, h, zero, zero).unwrap();
        assert_eq!(g.value(same), g.value(h));

        let p1 = g.constant(random(5, 1, 3));
        let p2 = g.constant(random(5, 1, 4));
        let e = g.constant(random(5, 1, 5));
        let sum = g.add(p1, p2);
        let both = a.apply_variances(&mut g, h, sum, e).unwrap();
        let first = a.apply_variances(&mut g, h, p1, e).unwrap();
        let second = a.apply_variances(&mut g, first, p2, zero).unwrap();
        let diff = g.value(both) - g.value(second);
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
        let bad = g.constant(zero_column(4));
        assert!(a.apply_variances(&mut g, h, bad, e).is_err());
    }

    #[test]
    fn inference_durations_are_clamped() {
        let (a, _) = build();
        assert_eq!(a.durations_from_log(&[-3.0, 0.0, 2f64.ln(), 10.0, f64::NAN]), vec![1, 1, 1, 50, 1]);
        assert_eq!(a.durations_from_log(&[(6f64).ln()]), vec![5]);
    }

    #[test]
    fn teacher_forced_and_matching_inference_agree_on_length() {
        let (a, store) = build();
        let targets = [3usize, 1, 4];
        let mut g = Graph::new(&store);
        let h = g.constant(random(3, 8, 7));
        let tf = a
            .forward(
                &mut g,
                h,
                route(3, 85),
                AdaptorMode::TeacherForced {
                    durations: &targets,
                    pitch: &[0.0; 3],
                    energy: &[0.0; 3],
                },
            )
            .unwrap();
        assert_eq!(g.shape(tf.frames).0, 8);
        let logs: Vec<f64> = targets.iter().map(|&d| (d as f64 + 1.0).ln()).collect();
        assert_eq!(a.durations_from_log(&logs), targets.to_vec());
        let inf = a.forward(&mut g, h, route(3, 85), AdaptorMode::Inference).unwrap();
        assert!(inf.durations.iter().all(|&d| d >= 1));
        assert_eq!(g.shape(inf.frames).0, inf.durations.iter().sum::<usize>());
    }
}
