//! Run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then a JSON file
//! given with `--config`, then individual command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use dstts_core::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub griffin_lim_iterations: usize,
    pub manifest: PathBuf,
    /// Directory written by `preprocess`.
    pub features: PathBuf,
    /// Defaults to `stats.json` inside `features`.
    pub stats: Option<PathBuf>,
    /// Defaults to `vocab.json` inside `features`.
    pub vocabulary: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-4,
            batch: 4,
            steps: 200_000,
            checkpoint_every: 1000,
            seed: 0,
            griffin_lim_iterations: 32,
            manifest: PathBuf::from("data/manifest.jsonl"),
            features: PathBuf::from("data/features"),
            stats: None,
            vocabulary: None,
            output: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.stats.clone().unwrap_or_else(|| self.features.join(crate::preprocess::STATS_FILE))
    }

    pub fn vocabulary_path(&self) -> PathBuf {
        self.vocabulary.clone().unwrap_or_else(|| self.features.join(crate::preprocess::VOCAB_FILE))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!("lr must be positive and finite");
        }
        if self.batch == 0 || self.checkpoint_every == 0 || self.griffin_lim_iterations == 0 {
            bail!("batch, checkpoint_every and griffin_lim_iterations must be positive");
        }
        Ok(())
    }
}

/// Flags shared by every command. Boolean switches can only turn an
/// ablation on; leave them out to keep the file's value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, batching and dropout
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Longest phoneme sequence routed to the short predictors
    #[arg(long, global = true)]
    pub dva_threshold: Option<usize>,
    /// Training steps
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Adam learning rate
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Utterances per training step
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Steps between intermediate checkpoints
    #[arg(long, global = true)]
    pub checkpoint_every: Option<u64>,
    /// JSON Lines manifest of utterances
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Feature cache directory
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace the MFCC style branch with a second mel projection
    #[arg(long, global = true)]
    pub no_mfcc: bool,
    /// Disable the short-sequence predictors
    #[arg(long, global = true)]
    pub no_dva_sp: bool,
    /// Disable the long-sequence predictors
    #[arg(long, global = true)]
    pub no_dva_lp: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.dva_threshold {
            cfg.model.dva_threshold = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        if let Some(v) = &self.manifest {
            cfg.manifest = v.clone();
        }
        if let Some(v) = &self.features {
            cfg.features = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.output = v.clone();
        }
        cfg.model.no_mfcc |= self.no_mfcc;
        cfg.model.no_dva_sp |= self.no_dva_sp;
        cfg.model.no_dva_lp |= self.no_dva_lp;
    }
}
