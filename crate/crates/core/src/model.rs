//! The full acoustic model: style encoder, phoneme encoder, routed variance
//! adaptor and mel decoder over one shared parameter store.

use serde::{Deserialize, Serialize};

use crate::acoustic::{BlockDims, MelDecoder, PhonemeEncoder};
use crate::data::{FeatureStats, TrainingExample};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamBuilder, ParamStore};
use crate::style::StyleEncoder;
use crate::variance::{AdaptorMode, AdaptorOutput, PredictorDims, RoutingDecision, RoutingOverride, VarianceAdaptor};
use crate::Mat;

/// Architecture hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub filter: usize,
    pub kernel: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub dropout: f64,
    /// Width of each style-encoder branch; the style vector is twice this.
    pub style_hidden: usize,
    pub style_heads: usize,
    pub variance_filter: usize,
    pub variance_kernel: usize,
    pub variance_dropout: f64,
    pub dva_threshold: usize,
    pub max_duration: usize,
    pub no_mfcc: bool,
    pub no_dva_sp: bool,
    pub no_dva_lp: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 80,
            hidden: 256,
            heads: 2,
            filter: 1024,
            kernel: 9,
            encoder_blocks: 4,
            decoder_blocks: 4,
            dropout: 0.1,
            style_hidden: 128,
            style_heads: 2,
            variance_filter: 256,
            variance_kernel: 3,
            variance_dropout: 0.5,
            dva_threshold: crate::variance::DEFAULT_THRESHOLD,
            max_duration: 100,
            no_mfcc: false,
            no_dva_sp: false,
            no_dva_lp: false,
        }
    }
}

impl ModelConfig {
    /// Small model used for finite-difference gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 16,
            heads: 2,
            filter: 16,
            kernel: 3,
            encoder_blocks: 2,
            decoder_blocks: 2,
            style_hidden: 8,
            style_heads: 2,
            variance_filter: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.vocab_size < 2 {
            return fail("vocab_size must cover padding and at least one symbol".into());
        }
        if self.dva_threshold < 1 {
            return fail("dva_threshold must be at least 1".into());
        }
        if self.no_dva_sp && self.no_dva_lp {
            return fail("no_dva_sp and no_dva_lp cannot both be set".into());
        }
        for (name, width, heads) in [("hidden", self.hidden, self.heads), ("style_hidden", self.style_hidden, self.style_heads)] {
            if heads == 0 || width == 0 || width % heads != 0 {
                return fail(format!("{name}={width} is not divisible by {heads} heads"));
            }
        }
        if !self.style_hidden.is_multiple_of(2) {
            return fail("style_hidden must be even".into());
        }
        for (name, k) in [("kernel", self.kernel), ("variance_kernel", self.variance_kernel)] {
            if k % 2 == 0 {
                return fail(format!("{name} must be odd"));
            }
        }
        for (name, p) in [("dropout", self.dropout), ("variance_dropout", self.variance_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1)"));
            }
        }
        if self.filter == 0 || self.variance_filter == 0 || self.max_duration == 0 {
            return fail("filter widths and max_duration must be positive".into());
        }
        Ok(())
    }

    pub fn style_dim(&self) -> usize {
        2 * self.style_hidden
    }

    pub fn routing(&self) -> RoutingOverride {
        RoutingOverride {
            no_short: self.no_dva_sp,
            no_long: self.no_dva_lp,
        }
    }

    pub fn route(&self, length: usize) -> RoutingDecision {
        self.routing().route(length, self.dva_threshold)
    }
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    pub style: Var,
    pub hidden: Var,
    pub adaptor: AdaptorOutput,
    pub mel: Var,
}

/// Inputs for one utterance.
pub struct ForwardInput<'a> {
    pub phonemes: &'a [usize],
    pub reference_mel: &'a Mat,
    pub reference_mfcc: &'a Mat,
}

#[derive(Debug, Clone)]
pub struct DsTts {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub style: StyleEncoder,
    pub encoder: PhonemeEncoder,
    pub adaptor: VarianceAdaptor,
    pub decoder: MelDecoder,
}

impl DsTts {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let style = StyleEncoder::new(&mut pb, config.style_hidden, config.style_heads, !config.no_mfcc);
        let dims = BlockDims {
            hidden: config.hidden,
            heads: config.heads,
            filter: config.filter,
            kernel: config.kernel,
            style_dim: config.style_dim(),
            dropout: config.dropout,
        };
        let encoder = PhonemeEncoder::new(&mut pb, config.vocab_size, config.encoder_blocks, &dims);
        let adaptor = VarianceAdaptor::new(
            &mut pb,
            &PredictorDims {
                hidden: config.hidden,
                filter: config.variance_filter,
                kernel: config.variance_kernel,
                dropout: config.variance_dropout,
            },
            config.max_duration,
        );
        let decoder = MelDecoder::new(&mut pb, config.decoder_blocks, &dims);
        Ok(Self {
            config,
            params: pb.finish(),
            style,
            encoder,
            adaptor,
            decoder,
        })
    }

    pub fn forward(&self, g: &mut Graph, input: &ForwardInput, mode: AdaptorMode) -> Result<ForwardOutput> {
        let style = self.style.forward(g, input.reference_mel, input.reference_mfcc)?;
        let hidden = self.encoder.forward(g, input.phonemes, style, None)?;
        let decision = self.config.route(input.phonemes.len());
        let adaptor = self.adaptor.forward(g, hidden, decision, mode)?;
        let mel = self.decoder.forward(g, adaptor.frames, style, None);
        Ok(ForwardOutput {
            style,
            hidden,
            adaptor,
            mel,
        })
    }

    /// Teacher-forced pass on a training utterance, using the utterance
    /// itself as the style reference.
    pub fn forward_teacher(&self, g: &mut Graph, ex: &TrainingExample, stats: &FeatureStats) -> Result<ForwardOutput> {
        ex.validate(self.config.vocab_size)?;
        let pitch = stats.standardize_pitch(&ex.pitch);
        let energy = stats.standardize_energy(&ex.energy);
        self.forward(
            g,
            &ForwardInput {
                phonemes: &ex.phonemes,
                reference_mel: &ex.mel,
                reference_mfcc: &ex.mfcc,
            },
            AdaptorMode::TeacherForced {
                durations: &ex.durations,
                pitch: &pitch,
                energy: &energy,
            },
        )
    }

    /// Style vector of a reference clip's features.
    pub fn style_vector(&self, mel: &Mat, mfcc: &Mat) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let v = self.style.forward(&mut g, mel, mfcc)?;
        Ok(g.value(v).iter().copied().collect())
    }

    /// Inference: predicted durations, pitch and energy.
    pub fn synthesize(&self, phonemes: &[usize], reference_mel: &Mat, reference_mfcc: &Mat) -> Result<Synthesis> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(
            &mut g,
            &ForwardInput {
                phonemes,
                reference_mel,
                reference_mfcc,
            },
            AdaptorMode::Inference,
        )?;
        let mel = g.value(out.mel).clone();
        if mel.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("synthesized mel".into()));
        }
        Ok(Synthesis {
            mel,
            durations: out.adaptor.durations,
            decision: out.adaptor.decision,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub mel: Mat,
    pub durations: Vec<usize>,
    pub decision: RoutingDecision,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variance::Branch;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            dva_threshold: 0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let both = ModelConfig {
            no_dva_sp: true,
            no_dva_lp: true,
            ..ModelConfig::default()
        };
        assert!(both.validate().is_err());
        let heads = ModelConfig {
            hidden: 15,
            ..ModelConfig::default()
        };
        assert!(heads.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig {
            no_mfcc: true,
            ..ModelConfig::tiny(7)
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), c);
    }

    #[test]
    fn routing_follows_flags() {
        let c = ModelConfig::default();
        assert_eq!(c.route(85).branch, Branch::Short);
        assert_eq!(c.route(86).branch, Branch::Long);
        let sp = ModelConfig {
            no_dva_sp: true,
            ..c.clone()
        };
        assert_eq!(sp.route(3).branch, Branch::Long);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = DsTts::new(ModelConfig::tiny(5), 3).unwrap();
        let b = DsTts::new(ModelConfig::tiny(5), 3).unwrap();
        assert_eq!(a.params, b.params);
        let c = DsTts::new(ModelConfig::tiny(5), 4).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn ablation_changes_parameter_set() {
        let full = DsTts::new(ModelConfig::tiny(5), 1).unwrap();
        let ablated = DsTts::new(
            ModelConfig {
                no_mfcc: true,
                ..ModelConfig::tiny(5)
            },
            1,
        )
        .unwrap();
        assert!(full.params.iter().any(|(_, n, _)| n.starts_with("style.mfcc_style")));
        assert!(!ablated.params.iter().any(|(_, n, _)| n.starts_with("style.mfcc_style")));
    }
}
