//! Inference: phonemes and a reference clip to a waveform.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dstts_core::data::extract_features;
use dstts_core::{Checkpoint, Mat, RoutingDecision};
use dstts_dsp::tensor_file::Tensor;
use dstts_dsp::{griffin_lim, invert_mel, write_wav, AudioClip, GriffinLimConfig, MelSpectrogram, WIN_LENGTH};

pub const OUTPUT_PEAK: f64 = 0.95;

/// Log-mel to waveform through mel inversion and Griffin-Lim, peak
/// normalised.
pub fn vocode(mel: &Mat, iterations: usize, seed: u64) -> Result<AudioClip> {
    let spec = invert_mel(&MelSpectrogram::new(mel.clone())?);
    let cfg = GriffinLimConfig {
        iterations,
        seed,
        ..GriffinLimConfig::default()
    };
    cfg.validate().map_err(anyhow::Error::msg)?;
    Ok(griffin_lim(&spec, &cfg).peak_normalized(OUTPUT_PEAK))
}

/// Grayscale binary PGM with one pixel per (mel bin, frame): frames run left
/// to right, the highest bin is the top row, and values are scaled linearly
/// from the minimum (black) to the maximum (white).
pub fn pgm(mel: &Mat) -> Vec<u8> {
    let (frames, bins) = mel.dim();
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    let lo = mel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for bin in (0..bins).rev() {
        for t in 0..frames {
            let v = if range > 0.0 { (mel[[t, bin]] - lo) / range } else { 0.0 };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub wav: PathBuf,
    pub mel: PathBuf,
    pub image: PathBuf,
    pub durations: Vec<usize>,
    pub decision: RoutingDecision,
    pub samples: usize,
}

/// Companion file paths: `out.wav` gives `out.mel.dstt` and `out.pgm`.
pub fn companion_paths(wav: &Path) -> (PathBuf, PathBuf) {
    (wav.with_extension("mel.dstt"), wav.with_extension("pgm"))
}

pub struct SynthesisRequest<'a> {
    pub phonemes: &'a [String],
    pub reference: &'a Path,
    pub wav: &'a Path,
    pub seed: u64,
    pub griffin_lim_iterations: usize,
    /// Routing threshold replacing the checkpoint's.
    pub dva_threshold: Option<usize>,
}

pub fn synthesize(ck: &Checkpoint, req: &SynthesisRequest) -> Result<SynthesisOutput> {
    let mut model = ck.model.clone();
    if let Some(t) = req.dva_threshold {
        model.config.dva_threshold = t;
        model.config.validate()?;
    }
    if req.phonemes.is_empty() {
        bail!("no phonemes to synthesize");
    }
    let ids = ck.vocabulary.encode(req.phonemes)?;
    let clip = dstts_dsp::load_audio(req.reference).with_context(|| format!("reading reference {}", req.reference.display()))?;
    if clip.len() < WIN_LENGTH {
        bail!("reference {} has {} samples; at least {WIN_LENGTH} are needed", req.reference.display(), clip.len());
    }
    let reference = extract_features(&clip)?;
    let out = model.synthesize(&ids, &reference.mel, &reference.mfcc)?;
    let audio = vocode(&out.mel, req.griffin_lim_iterations, req.seed)?;

    if let Some(dir) = req.wav.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let (mel_path, image_path) = companion_paths(req.wav);
    write_wav(req.wav, &audio)?;
    Tensor::from_array2(&out.mel).save(&mel_path)?;
    fs::write(&image_path, pgm(&out.mel)).with_context(|| format!("writing {}", image_path.display()))?;
    Ok(SynthesisOutput {
        wav: req.wav.to_path_buf(),
        mel: mel_path,
        image: image_path,
        durations: out.durations,
        decision: out.decision,
        samples: audio.len(),
    })
}
