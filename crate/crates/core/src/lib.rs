//! Zero-shot multi-speaker acoustic model with dual style encoders,
//! style-gated FiLM conditioning and a length-routed variance adaptor,
//! together with its training loop, checkpoints and evaluation metrics.
//!
//! All numerics run in `f64` on a small reverse-mode autodiff tape
//! ([`graph::Graph`]); parameters live in a [`params::ParamStore`].

pub mod acoustic;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod sgf;
pub mod style;
pub mod train;
pub mod variance;

pub type Mat = ndarray::Array2<f64>;

pub use checkpoint::Checkpoint;
pub use data::{FeatureStats, ManifestRecord, TrainingExample, UtteranceFeatures, Vocabulary};
pub use error::{CoreError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use loss::{compute_losses, mel_mae, mse, LossBreakdown};
pub use metrics::{cosine_similarity, smcs, EvalReport, SpeakerEmbedder};
pub use model::{DsTts, ModelConfig, Synthesis};
pub use optim::{Adam, AdamConfig};
pub use train::Trainer;
pub use variance::{route, Branch, RoutingDecision};
