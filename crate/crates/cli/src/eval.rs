//! Evaluation over reference/synthesis pairs and the threshold sweep.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dstts_core::data::extract_features;
use dstts_core::metrics::{parse_markdown, to_markdown, ExternalEmbeddings, PairResult, ReportMetadata, StyleEmbedder};
use dstts_core::{mel_mae, smcs, Checkpoint, EvalReport, SpeakerEmbedder};
use dstts_dsp::{load_audio, AudioClip};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::preprocess::{load_corpus, Corpus};
use crate::synth::vocode;
use crate::train::train_on;

pub const DEFAULT_THRESHOLDS: [usize; 5] = [75, 80, 85, 90, 95];

/// One line of a pairs manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub ref_wav: PathBuf,
    pub syn_wav: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairSpec>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut p: PairSpec = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        for wav in [&mut p.ref_wav, &mut p.syn_wav] {
            if wav.is_relative() {
                *wav = base.join(&*wav);
            }
        }
        out.push(p);
    }
    if out.is_empty() {
        bail!("{} lists no pairs", path.display());
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Mel MAE of two clips when they have the same number of frames; clips of
/// different length have no frame alignment to compare.
fn clip_mel_mae(a: &AudioClip, b: &AudioClip) -> Result<Option<f64>> {
    let fa = extract_features(a)?;
    let fb = extract_features(b)?;
    if fa.frames() != fb.frames() {
        return Ok(None);
    }
    Ok(Some(mel_mae(&fa.mel, &fb.mel)?))
}

struct ScoredPair<'a> {
    id: String,
    reference: (String, &'a AudioClip),
    synthesized: (String, &'a AudioClip),
    mel_mae: Option<f64>,
}

fn score(pairs: &[ScoredPair], embedder: &(dyn SpeakerEmbedder + Sync)) -> Result<Vec<PairResult>> {
    pairs
        .par_iter()
        .map(|p| {
            let s = smcs((&p.reference.0, p.reference.1), (&p.synthesized.0, p.synthesized.1), embedder)?;
            Ok(PairResult {
                id: p.id.clone(),
                smcs: s,
                mel_mae: p.mel_mae,
            })
        })
        .collect()
}

pub struct EvalRequest<'a> {
    pub pairs: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub embeddings: Option<&'a Path>,
    pub method: &'a str,
}

/// Scores each pair with the checkpoint's style encoder, or with external
/// embeddings keyed by WAV file stem when a directory is given.
pub fn evaluate(req: &EvalRequest, cfg: &RunConfig) -> Result<EvalReport> {
    let specs = read_pairs(req.pairs)?;
    let ck = req.checkpoint.map(Checkpoint::load).transpose()?;
    let external = req.embeddings.map(ExternalEmbeddings::load_dir).transpose()?;
    let style = ck.as_ref().map(|c| StyleEmbedder { model: &c.model });
    let embedder: &(dyn SpeakerEmbedder + Sync) = match (&external, &style) {
        (Some(e), _) => e,
        (None, Some(s)) => s,
        (None, None) => bail!("eval needs a checkpoint or an embeddings directory"),
    };
    let clips = specs
        .par_iter()
        .map(|p| -> Result<(AudioClip, AudioClip, Option<f64>)> {
            let r = load_audio(&p.ref_wav)?;
            let s = load_audio(&p.syn_wav)?;
            let mae = clip_mel_mae(&r, &s)?;
            Ok((r, s, mae))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<ScoredPair> = specs
        .iter()
        .zip(&clips)
        .map(|(p, (r, s, mae))| ScoredPair {
            id: p.id.clone().unwrap_or_else(|| stem(&p.syn_wav)),
            reference: (stem(&p.ref_wav), r),
            synthesized: (stem(&p.syn_wav), s),
            mel_mae: *mae,
        })
        .collect();
    let results = score(&pairs, embedder)?;
    let metadata = ReportMetadata {
        threshold: ck.as_ref().map_or(cfg.model.dva_threshold, |c| c.model.config.dva_threshold),
        checkpoint: req.checkpoint.map_or("none".into(), |p| p.display().to_string()),
        embedder: embedder.describe(),
    };
    Ok(EvalReport::new(req.method, metadata, results)?)
}

/// Evaluates a checkpoint on the cached corpus. Mel MAE is measured on the
/// teacher-forced output; SMCS compares each recording with a Griffin-Lim
/// rendering of its free-running synthesis, using the utterance itself as
/// the style reference.
pub fn evaluate_corpus(ck: &Checkpoint, ck_path: &Path, corpus: &Corpus, cfg: &RunConfig, method: &str) -> Result<EvalReport> {
    let model = &ck.model;
    let rendered = corpus
        .examples
        .par_iter()
        .zip(&corpus.records)
        .map(|(ex, rec)| -> Result<(AudioClip, AudioClip, f64)> {
            let mut g = dstts_core::graph::Graph::new(&model.params);
            let out = model.forward_teacher(&mut g, ex, &ck.stats)?;
            let mae = mel_mae(g.value(out.mel), &ex.mel)?;
            let syn = model.synthesize(&ex.phonemes, &ex.mel, &ex.mfcc)?;
            let audio = vocode(&syn.mel, cfg.griffin_lim_iterations, cfg.seed)?;
            Ok((load_audio(&rec.wav)?, audio, mae))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<ScoredPair> = corpus
        .records
        .iter()
        .zip(&rendered)
        .map(|(rec, (r, s, mae))| ScoredPair {
            id: rec.id.clone(),
            reference: (rec.id.clone(), r),
            synthesized: (format!("{}.syn", rec.id), s),
            mel_mae: Some(*mae),
        })
        .collect();
    let embedder = StyleEmbedder { model };
    let results = score(&pairs, &embedder)?;
    let metadata = ReportMetadata {
        threshold: model.config.dva_threshold,
        checkpoint: ck_path.display().to_string(),
        embedder: embedder.describe(),
    };
    Ok(EvalReport::new(method, metadata, results)?)
}

pub fn write_reports(dir: &Path, name: &str, reports: &[EvalReport]) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let json = dir.join(format!("{name}.json"));
    let md = dir.join(format!("{name}.md"));
    let rows: Vec<_> = reports.iter().map(EvalReport::row).collect();
    fs::write(&json, serde_json::to_string_pretty(reports)? + "\n")?;
    fs::write(&md, to_markdown(&rows)?)?;
    Ok((json, md))
}

pub fn method_name(threshold: usize) -> String {
    format!("threshold {threshold}")
}

/// Trains and evaluates one model per threshold, each in its own
/// subdirectory of the output directory, and writes `ablation.json` and
/// `ablation.md`.
pub fn ablate(cfg: &RunConfig, thresholds: &[usize]) -> Result<Vec<EvalReport>> {
    if thresholds.is_empty() {
        bail!("no thresholds to sweep");
    }
    let corpus = load_corpus(&cfg.features, &cfg.stats_path(), &cfg.vocabulary_path())?;
    let mut reports = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut run = cfg.clone();
        run.model.dva_threshold = t;
        run.output = cfg.output.join(format!("threshold_{t}"));
        run.validate()?;
        info!("threshold {t}: training into {}", run.output.display());
        let summary = train_on(&run, &corpus)?;
        let ck = Checkpoint::load(&summary.checkpoint)?;
        reports.push(evaluate_corpus(&ck, &summary.checkpoint, &corpus, &run, &method_name(t))?);
    }
    let (_, md) = write_reports(&cfg.output, "ablation", &reports)?;
    let back = parse_markdown(&fs::read_to_string(&md)?)?;
    debug_assert_eq!(back, reports.iter().map(EvalReport::row).collect::<Vec<_>>());
    Ok(reports)
}
