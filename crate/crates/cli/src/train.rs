//! The training command.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use dstts_core::{AdamConfig, Checkpoint, CoreError, DsTts, LossBreakdown, Trainer};
use log::{error, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::preprocess::{load_corpus, Corpus};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const FINAL_CHECKPOINT: &str = "final.dsck";

/// One line of the training log. Losses are measured before the step's
/// update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub l_rec: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub l_p: f64,
    pub total: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub first: LossBreakdown,
    pub last: LossBreakdown,
    pub checkpoint: PathBuf,
}

pub fn step_checkpoint(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:07}.dsck"))
}

/// Cycles through the corpus in a fresh seeded order each epoch.
struct Batches {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            pos: 0,
            size: size.min(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        b.order.shuffle(&mut b.rng);
        b
    }

    fn next(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size);
        while out.len() < self.size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn checkpoint(trainer: &Trainer, corpus: &Corpus, cfg: &RunConfig) -> Result<Checkpoint> {
    Ok(Checkpoint {
        model: trainer.model.clone(),
        run: serde_json::to_value(cfg)?,
        vocabulary: corpus.vocabulary.clone(),
        stats: trainer.stats,
        step: trainer.step,
    })
}

/// Trains on the feature cache named by `cfg`. The vocabulary size in the
/// model configuration is taken from the cache.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let corpus = load_corpus(&cfg.features, &cfg.stats_path(), &cfg.vocabulary_path())?;
    train_on(cfg, &corpus)
}

pub fn train_on(cfg: &RunConfig, corpus: &Corpus) -> Result<TrainSummary> {
    let mut cfg = cfg.clone();
    cfg.model.vocab_size = corpus.vocabulary.len();
    cfg.validate()?;
    let out = cfg.output.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json()?)?;

    let model = DsTts::new(cfg.model.clone(), cfg.seed)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut trainer = Trainer::new(model, adam, corpus.stats, cfg.seed);
    let mut batches = Batches::new(corpus.examples.len(), cfg.batch, cfg.seed);
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    info!(
        "training {} parameters on {} utterances for {} steps",
        trainer.model.params.scalar_count(),
        corpus.examples.len(),
        cfg.steps
    );

    let start = Instant::now();
    let mut first = None;
    let mut last = None;
    let mut last_good: Option<PathBuf> = None;
    let abort = |e: CoreError, last_good: &Option<PathBuf>| {
        let kept = last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        error!("training aborted: {e}; last good checkpoint: {kept}");
        anyhow::Error::new(e)
    };
    while trainer.step < cfg.steps {
        let idx = batches.next();
        let batch: Vec<_> = idx.iter().map(|&i| corpus.examples[i].clone()).collect();
        let step = trainer.step + 1;
        let loss = match trainer.train_step(&batch) {
            Ok(l) => l,
            Err(e @ CoreError::NonFinite(_)) => return Err(abort(e, &last_good)),
            Err(e) => return Err(e.into()),
        };
        let line = LogLine {
            step,
            l_rec: loss.l_rec,
            l_d: loss.l_d,
            l_e: loss.l_e,
            l_p: loss.l_p,
            total: loss.total,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        serde_json::to_writer(&mut log, &line)?;
        log.write_all(b"\n")?;
        log.flush()?;
        first.get_or_insert(loss);
        last = Some(loss);
        if step.is_multiple_of(cfg.checkpoint_every) && step < cfg.steps {
            let path = step_checkpoint(&out, step);
            match checkpoint(&trainer, corpus, &cfg)?.save(&path) {
                Ok(()) => last_good = Some(path),
                Err(e @ CoreError::NonFinite(_)) => return Err(abort(e, &last_good)),
                Err(e) => return Err(e.into()),
            }
        }
    }
    let path = out.join(FINAL_CHECKPOINT);
    match checkpoint(&trainer, corpus, &cfg)?.save(&path) {
        Ok(()) => {}
        Err(e @ CoreError::NonFinite(_)) => return Err(abort(e, &last_good)),
        Err(e) => return Err(e.into()),
    }
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            let l = trainer.evaluate(&corpus.examples)?;
            (l, l)
        }
    };
    info!("step {}: total {:.4} (from {:.4}), l_rec {:.4}", trainer.step, last.total, first.total, last.l_rec);
    Ok(TrainSummary {
        first,
        last,
        checkpoint: path,
    })
}
