//! Feature cache: per-utterance DSTT tensors, corpus statistics and the
//! phoneme inventory.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dstts_core::data::{extract_features, read_manifest, reconcile_durations};
use dstts_core::{FeatureStats, ManifestRecord, TrainingExample, Vocabulary};
use dstts_dsp::tensor_file::Tensor;
use dstts_dsp::{load_audio, phoneme_average, phoneme_average_voiced};
use log::{info, warn};
use rayon::prelude::*;

pub const STATS_FILE: &str = "stats.json";
pub const VOCAB_FILE: &str = "vocab.json";
/// Accepted utterances with reconciled durations.
pub const INDEX_FILE: &str = "index.jsonl";
pub const FEATURES: [&str; 4] = ["mel", "mfcc", "pitch", "energy"];

pub fn feature_path(dir: &Path, id: &str, feature: &str) -> PathBuf {
    dir.join(format!("{id}.{feature}.dstt"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub accepted: Vec<String>,
    /// Utterance id and the reason it was skipped.
    pub rejected: Vec<(String, String)>,
}

struct Accepted {
    record: ManifestRecord,
    pitch: Vec<f64>,
    energy: Vec<f64>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        bail!("utterance id {id:?} is not usable as a file name");
    }
    Ok(())
}

fn process(rec: &ManifestRecord, out: &Path) -> Result<Accepted> {
    check_id(&rec.id)?;
    let clip = load_audio(&rec.wav)?;
    let f = extract_features(&clip)?;
    let durations = reconcile_durations(&rec.durations, f.frames())?;
    // The index lives in another directory, so it records absolute paths.
    let wav = fs::canonicalize(&rec.wav)?;
    // Per-phoneme values come from the stored f32 frames so that training
    // sees exactly the statistics computed here.
    let tensors = [
        Tensor::from_array2(&f.mel),
        Tensor::from_array2(&f.mfcc),
        Tensor::from_vec(&f.pitch),
        Tensor::from_vec(&f.energy),
    ];
    let pitch = phoneme_average_voiced(&tensors[2].to_vec(), &durations)?;
    let energy = phoneme_average(&tensors[3].to_vec(), &durations)?;
    for (tensor, name) in tensors.iter().zip(FEATURES) {
        tensor.save(feature_path(out, &rec.id, name))?;
    }
    Ok(Accepted {
        record: ManifestRecord {
            durations,
            wav,
            ..rec.clone()
        },
        pitch,
        energy,
    })
}

/// Extracts features for every manifest entry in parallel. Failing
/// utterances are logged and skipped; the run fails when more than a tenth
/// of them do. Output bytes depend only on the inputs.
pub fn preprocess(manifest: &Path, out: &Path) -> Result<PreprocessReport> {
    let records = read_manifest(manifest)?;
    if records.is_empty() {
        bail!("manifest {} lists no utterances", manifest.display());
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.id.as_str())) {
        bail!("utterance id {} appears twice", dup.id);
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let results: Vec<Result<Accepted>> = records.par_iter().map(|r| process(r, out)).collect();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (rec, result) in records.iter().zip(results) {
        match result {
            Ok(a) => accepted.push(a),
            Err(e) => {
                warn!("rejected utterance {}: {e:#}", rec.id);
                rejected.push((rec.id.clone(), format!("{e:#}")));
            }
        }
    }
    if rejected.len() * 10 > records.len() {
        bail!("{} of {} utterances failed preprocessing", rejected.len(), records.len());
    }

    let vocab = Vocabulary::from_corpus(accepted.iter().flat_map(|a| a.record.phonemes.iter().map(String::as_str)));
    vocab.save(&out.join(VOCAB_FILE))?;
    let pitch: Vec<f64> = accepted.iter().flat_map(|a| a.pitch.iter().copied()).collect();
    let energy: Vec<f64> = accepted.iter().flat_map(|a| a.energy.iter().copied()).collect();
    FeatureStats::from_values(&pitch, &energy).save(&out.join(STATS_FILE))?;
    let mut index = Vec::new();
    for a in &accepted {
        serde_json::to_writer(&mut index, &a.record)?;
        index.write_all(b"\n")?;
    }
    let index_path = out.join(INDEX_FILE);
    fs::write(&index_path, index).with_context(|| format!("writing {}", index_path.display()))?;
    info!(
        "preprocessed {} utterances ({} rejected), {} phoneme symbols",
        accepted.len(),
        rejected.len(),
        vocab.len() - 1
    );
    Ok(PreprocessReport {
        accepted: accepted.into_iter().map(|a| a.record.id).collect(),
        rejected,
    })
}

/// A loaded feature cache.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub stats: FeatureStats,
    pub records: Vec<ManifestRecord>,
    pub examples: Vec<TrainingExample>,
}

pub fn load_example(dir: &Path, rec: &ManifestRecord, vocab: &Vocabulary) -> Result<TrainingExample> {
    let load = |name: &str| {
        let path = feature_path(dir, &rec.id, name);
        Tensor::load(&path).with_context(|| format!("loading {}", path.display()))
    };
    let features = dstts_core::UtteranceFeatures {
        mel: load("mel")?.to_array2()?,
        mfcc: load("mfcc")?.to_array2()?,
        pitch: load("pitch")?.to_vec(),
        energy: load("energy")?.to_vec(),
    };
    let ex = TrainingExample::from_features(rec.id.clone(), vocab.encode(&rec.phonemes)?, rec.durations.clone(), &features)?;
    ex.validate(vocab.len())?;
    Ok(ex)
}

pub fn load_corpus(features: &Path, stats: &Path, vocabulary: &Path) -> Result<Corpus> {
    let vocabulary = Vocabulary::load(vocabulary)?;
    let stats = FeatureStats::load(stats)?;
    let records = read_manifest(&features.join(INDEX_FILE))?;
    if records.is_empty() {
        bail!("feature cache {} holds no utterances", features.display());
    }
    let examples = records
        .iter()
        .map(|r| load_example(features, r, &vocabulary))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        vocabulary,
        stats,
        records,
        examples,
    })
}
