//! Speaker-similarity scoring and report serialisation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dstts_dsp::{tensor_file::Tensor, AudioClip};
use serde::{Deserialize, Serialize};

use crate::data::extract_features;
use crate::error::{CoreError, Result};
use crate::model::DsTts;

/// WER cell text; word error rate needs an external recogniser.
pub const WER_NOT_AVAILABLE: &str = "n/a (external ASR out of scope)";

/// `<a, b> / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Maps a clip to a fixed-width speaker vector. `id` names the clip for
/// embedders that look vectors up rather than compute them.
pub trait SpeakerEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, id: &str, clip: &AudioClip) -> Result<Vec<f64>>;
    fn describe(&self) -> String;
}

/// The model's own style encoder. Clips are peak-normalised first so the
/// embedding does not depend on recording gain.
pub struct StyleEmbedder<'m> {
    pub model: &'m DsTts,
}

impl SpeakerEmbedder for StyleEmbedder<'_> {
    fn dim(&self) -> usize {
        self.model.config.style_dim()
    }

    fn embed(&self, _id: &str, clip: &AudioClip) -> Result<Vec<f64>> {
        let f = extract_features(&clip.peak_normalized(0.95))?;
        self.model.style_vector(&f.mel, &f.mfcc)
    }

    fn describe(&self) -> String {
        "model style encoder (proxy; not comparable to published SMCS)".into()
    }
}

/// Precomputed vectors, one DSTT file per clip id.
pub struct ExternalEmbeddings {
    vectors: BTreeMap<String, Vec<f64>>,
    dim: usize,
}

impl ExternalEmbeddings {
    pub fn new(vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors.values().next().map(Vec::len).unwrap_or(0);
        if let Some((id, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(CoreError::Shape(format!("embedding {id} has {} entries, expected {dim}", v.len())));
        }
        Ok(Self { vectors, dim })
    }

    /// Loads every `<id>.dstt` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut vectors = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))? {
            let path = entry.map_err(|e| CoreError::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("dstt") {
                continue;
            }
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            vectors.insert(id, Tensor::load(&path)?.to_vec());
        }
        Self::new(vectors)
    }
}

impl SpeakerEmbedder for ExternalEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str, _clip: &AudioClip) -> Result<Vec<f64>> {
        self.vectors
            .get(id)
            .cloned()
            .ok_or_else(|| CoreError::Config(format!("no external embedding for {id}")))
    }

    fn describe(&self) -> String {
        "external embeddings".into()
    }
}

pub fn smcs(reference: (&str, &AudioClip), synthesized: (&str, &AudioClip), embedder: &dyn SpeakerEmbedder) -> Result<f64> {
    let a = embedder.embed(reference.0, reference.1)?;
    let b = embedder.embed(synthesized.0, synthesized.1)?;
    cosine_similarity(&a, &b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub smcs: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mel_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub threshold: usize,
    pub checkpoint: String,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub metadata: ReportMetadata,
    pub pairs: Vec<PairResult>,
    pub mean_smcs: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_mel_mae: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new(method: impl Into<String>, metadata: ReportMetadata, pairs: Vec<PairResult>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(CoreError::Empty("evaluation produced no pairs".into()));
        }
        if let Some(p) = pairs.iter().find(|p| !(-1.0..=1.0).contains(&p.smcs)) {
            return Err(CoreError::Config(format!("SMCS {} of {} outside [-1, 1]", p.smcs, p.id)));
        }
        let mean_smcs = mean(pairs.iter().map(|p| p.smcs)).unwrap();
        let mean_mel_mae = mean(pairs.iter().filter_map(|p| p.mel_mae));
        Ok(Self {
            method: method.into(),
            metadata,
            pairs,
            mean_smcs,
            mean_mel_mae,
        })
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            method: self.method.clone(),
            smcs: self.mean_smcs,
            mel_mae: self.mean_mel_mae,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub smcs: f64,
    pub mel_mae: Option<f64>,
}

const HEADER: &str = "| Method | WER | SMCS | Mel MAE |";
const RULE: &str = "|---|---|---|---|";

/// Markdown table with a WER column kept for layout parity.
pub fn to_markdown(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(CoreError::Empty("report has no rows".into()));
    }
    let mut out = format!("{HEADER}\n{RULE}\n");
    for r in rows {
        if r.method.contains('|') || r.method.contains('\n') {
            return Err(CoreError::Config(format!("method name {:?} cannot be tabulated", r.method)));
        }
        let mae = r.mel_mae.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        out.push_str(&format!("| {} | {} | {} | {} |\n", r.method, WER_NOT_AVAILABLE, r.smcs, mae));
    }
    Ok(out)
}

/// Reads back a table written by [`to_markdown`].
pub fn parse_markdown(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |m: String| CoreError::Config(format!("report table: {m}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(HEADER) || lines.next().map(str::trim) != Some(RULE) {
        return Err(bad("missing header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.trim().trim_matches('|').split('|').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(bad(format!("expected 4 cells in {line:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        rows.push(ReportRow {
            method: cells[0].to_string(),
            smcs: num(cells[2])?,
            mel_mae: if cells[3] == "n/a" { None } else { Some(num(cells[3])?) },
        });
    }
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(rows)
}
