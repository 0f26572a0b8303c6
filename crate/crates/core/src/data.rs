//! Vocabulary, manifests, corpus statistics and per-utterance features.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use dstts_dsp::{
    extract_energy, extract_pitch, mel_spectrogram, mfcc, phoneme_average, phoneme_average_voiced,
    stft_magnitude, AudioClip, SpectralFrames,
};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::Mat;

pub const PAD: &str = "<pad>";

/// Phoneme symbols; the index of a symbol is its id and id 0 is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an explicit symbol list whose first entry must be the
    /// padding symbol.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(PAD) {
            return Err(CoreError::Config(format!("vocabulary must start with {PAD}")));
        }
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(CoreError::Config(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Padding plus every distinct symbol in sorted order.
    pub fn from_corpus<'a>(phonemes: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<&str> = phonemes.into_iter().filter(|&p| p != PAD).collect();
        set.sort_unstable();
        set.dedup();
        let symbols = std::iter::once(PAD).chain(set).map(String::from).collect();
        Self::new(symbols).expect("sorted, deduplicated symbols are valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Result<usize> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| CoreError::UnknownPhoneme(symbol.to_string()))
    }

    pub fn encode<S: AsRef<str>>(&self, phonemes: &[S]) -> Result<Vec<usize>> {
        phonemes.iter().map(|p| self.id(p.as_ref())).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.symbols)?;
        fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
    }
}

/// Corpus mean and standard deviation of per-phoneme pitch and energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

impl Default for FeatureStats {
    fn default() -> Self {
        Self {
            pitch_mean: 0.0,
            pitch_std: 1.0,
            energy_mean: 0.0,
            energy_std: 1.0,
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-8 { std } else { 1.0 })
}

impl FeatureStats {
    /// Statistics over every phoneme value, unvoiced zeros included.
    pub fn from_values(pitch: &[f64], energy: &[f64]) -> Self {
        let (pitch_mean, pitch_std) = mean_std(pitch);
        let (energy_mean, energy_std) = mean_std(energy);
        Self {
            pitch_mean,
            pitch_std,
            energy_mean,
            energy_std,
        }
    }

    pub fn standardize_pitch(&self, pitch: &[f64]) -> Vec<f64> {
        pitch.iter().map(|p| (p - self.pitch_mean) / self.pitch_std).collect()
    }

    pub fn standardize_energy(&self, energy: &[f64]) -> Vec<f64> {
        energy.iter().map(|e| (e - self.energy_mean) / self.energy_std).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
    }
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub wav: PathBuf,
    pub phonemes: Vec<String>,
    pub durations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

/// Reads a JSON Lines manifest; relative `wav` paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| CoreError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if rec.phonemes.len() != rec.durations.len() {
            return Err(CoreError::Config(format!(
                "{}:{}: {} phonemes but {} durations",
                path.display(),
                n + 1,
                rec.phonemes.len(),
                rec.durations.len()
            )));
        }
        if rec.wav.is_relative() {
            rec.wav = base.join(&rec.wav);
        }
        out.push(rec);
    }
    Ok(out)
}

/// Adjusts the last phoneme when the durations miss the frame count by one
/// frame; any larger disagreement is an error.
pub fn reconcile_durations(durations: &[usize], frames: usize) -> Result<Vec<usize>> {
    let sum: usize = durations.iter().sum();
    let mut out = durations.to_vec();
    match sum.abs_diff(frames) {
        0 => {}
        1 if !out.is_empty() => {
            let last = out.last_mut().unwrap();
            if sum > frames {
                if *last == 0 {
                    return Err(dstts_dsp::DspError::DurationMismatch { sum, frames }.into());
                }
                *last -= 1;
            } else {
                *last += 1;
            }
        }
        _ => return Err(dstts_dsp::DspError::DurationMismatch { sum, frames }.into()),
    }
    Ok(out)
}

/// Frame-level features of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub mel: Mat,
    pub mfcc: Mat,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

impl UtteranceFeatures {
    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }
}

pub fn extract_features(clip: &AudioClip) -> Result<UtteranceFeatures> {
    let spec: SpectralFrames = stft_magnitude(clip)?;
    let mel = mel_spectrogram(&spec);
    let cepstra = mfcc(&mel);
    Ok(UtteranceFeatures {
        pitch: extract_pitch(clip),
        energy: extract_energy(&spec),
        mfcc: cepstra.frames,
        mel: mel.frames,
    })
}

/// Everything one teacher-forced training step needs for an utterance.
/// Pitch and energy are per-phoneme raw values (Hz, magnitude).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub mel: Mat,
    pub mfcc: Mat,
}

impl TrainingExample {
    /// Averages frame-level pitch and energy over each phoneme's span.
    pub fn from_features(id: impl Into<String>, phonemes: Vec<usize>, durations: Vec<usize>, f: &UtteranceFeatures) -> Result<Self> {
        if phonemes.len() != durations.len() {
            return Err(CoreError::Shape(format!(
                "{} phonemes but {} durations",
                phonemes.len(),
                durations.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            pitch: phoneme_average_voiced(&f.pitch, &durations)?,
            energy: phoneme_average(&f.energy, &durations)?,
            phonemes,
            durations,
            mel: f.mel.clone(),
            mfcc: f.mfcc.clone(),
        })
    }

    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let n = self.phonemes.len();
        if n == 0 {
            return Err(CoreError::Empty(format!("utterance {} has no phonemes", self.id)));
        }
        if self.durations.len() != n || self.pitch.len() != n || self.energy.len() != n {
            return Err(CoreError::Shape(format!("utterance {}: per-phoneme lengths differ", self.id)));
        }
        if let Some(&id) = self.phonemes.iter().find(|&&p| p >= vocab_size) {
            return Err(CoreError::PhonemeOutOfRange { id, size: vocab_size });
        }
        let sum: usize = self.durations.iter().sum();
        if sum != self.frames() {
            return Err(dstts_dsp::DspError::DurationMismatch { sum, frames: self.frames() }.into());
        }
        if self.mel.ncols() != dstts_dsp::N_MELS || self.mfcc.dim() != (self.frames(), dstts_dsp::N_MFCC) {
            return Err(CoreError::Shape(format!("utterance {}: feature widths", self.id)));
        }
        Ok(())
    }
}
