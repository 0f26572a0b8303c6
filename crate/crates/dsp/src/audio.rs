//! WAV ingestion, resampling and export.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{DspError, Result};
use crate::SAMPLE_RATE;

/// Mono PCM audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scales the clip so its largest absolute sample equals `peak`.
    /// Silent clips are returned unchanged.
    pub fn peak_normalized(&self, peak: f64) -> Self {
        let max = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max == 0.0 || !max.is_finite() {
            return self.clone();
        }
        let gain = peak / max;
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    pub(crate) fn require_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(DspError::SampleRate {
                expected: SAMPLE_RATE,
                actual: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Reads a 16-bit PCM WAV, mixes stereo down to mono and resamples to 16 kHz.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => DspError::Read {
            path: path.to_path_buf(),
            source,
        },
        other => DspError::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedEncoding(format!(
            "{:?} {}-bit (only 16-bit PCM is accepted)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels == 0 || spec.channels > 2 {
        return Err(DspError::UnsupportedEncoding(format!(
            "{} channels (mono or stereo only)",
            spec.channels
        )));
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| DspError::Wav {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if raw.is_empty() {
        return Err(DspError::EmptyAudio);
    }
    let samples = match spec.channels {
        1 => raw.iter().map(|&s| s as f64 / 32768.0).collect(),
        _ => raw
            .chunks_exact(2)
            .map(|c| (c[0] as f64 / 32768.0 + c[1] as f64 / 32768.0) / 2.0)
            .collect::<Vec<_>>(),
    };
    if samples.is_empty() {
        return Err(DspError::EmptyAudio);
    }
    let clip = AudioClip::new(samples, spec.sample_rate);
    Ok(resample(&clip, SAMPLE_RATE))
}

/// Writes a mono 16-bit PCM WAV. Samples outside `[-1, 1]` are clipped.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => DspError::Write {
            path: path.to_path_buf(),
            source,
        },
        other => DspError::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Zero crossings of the sinc kernel kept on each side of the centre.
const SINC_HALF_WIDTH: f64 = 32.0;

/// Band-limited resampling by direct Hann-windowed sinc interpolation.
///
/// The output has `round(len * target / source)` samples and is clamped to
/// `[-1, 1]`. Identical rates return the input untouched.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    if clip.sample_rate == target_rate || clip.is_empty() {
        return AudioClip::new(clip.samples.clone(), target_rate);
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    // Cutoff relative to the input Nyquist; lowered when downsampling.
    let cutoff = ratio.min(1.0);
    let support = SINC_HALF_WIDTH / cutoff;
    let input = &clip.samples;
    let samples = (0..out_len)
        .map(|j| {
            let centre = j as f64 / ratio;
            let lo = (centre - support).ceil().max(0.0) as usize;
            let hi = ((centre + support).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0;
            for (n, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let t = n as f64 - centre;
                let window = 0.5 + 0.5 * (PI * t / support).cos();
                acc += x * cutoff * sinc(cutoff * t) * window;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}
