//! Mel inversion and Griffin-Lim phase recovery.
//!
//! This stands in for a neural vocoder: the model's log-mel output is mapped
//! back to linear magnitudes with a non-negative least-squares fit, then a
//! waveform is recovered with the fast (momentum) Griffin-Lim iteration.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::audio::AudioClip;
use crate::mel::{MelFilterbank, MelSpectrogram};
use crate::stft::{magnitudes, SpectralFrames, StftEngine};
use crate::{N_BINS, N_MELS, SAMPLE_RATE};

/// Multiplicative-update iterations used by [`invert_mel`].
pub const NNLS_ITERATIONS: usize = 400;
/// Overlap-add normalisation floor for the final waveform. The squared Hann
/// windows sum to 1.5 in the interior; only the outer edges fall below this.
const OUTPUT_NORM_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GriffinLimConfig {
    pub iterations: usize,
    pub momentum: f64,
    /// Seed for the initial random phases.
    pub seed: u64,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iterations: 32,
            momentum: 0.99,
            seed: 0,
        }
    }
}

impl GriffinLimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations == 0 {
            return Err("griffin-lim needs at least one iteration".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}

/// Maps a log-mel spectrogram back to linear STFT magnitudes.
///
/// Each frame solves `min ||M x - exp(mel)||` subject to `x >= 0` by
/// Lee-Seung multiplicative updates started from `M^T exp(mel)`.
pub fn invert_mel(mel: &MelSpectrogram) -> SpectralFrames {
    let bank = MelFilterbank::new();
    let t = mel.frame_count();
    let mut frames = Array2::zeros((t, N_BINS));
    let mut target = vec![0.0; N_MELS];
    let mut numer = vec![0.0; N_BINS];
    let mut x = vec![0.0; N_BINS];
    let mut mx = vec![0.0; N_MELS];
    let mut denom = vec![0.0; N_BINS];
    for (i, row) in mel.frames.rows().into_iter().enumerate() {
        for (d, &v) in target.iter_mut().zip(row.iter()) {
            *d = v.exp();
        }
        bank.apply_transpose(&target, &mut numer);
        x.copy_from_slice(&numer);
        for _ in 0..NNLS_ITERATIONS {
            bank.apply_frame(&x, &mut mx);
            bank.apply_transpose(&mx, &mut denom);
            for k in 0..N_BINS {
                if denom[k] > 0.0 {
                    x[k] *= numer[k] / denom[k];
                }
            }
        }
        for (k, &v) in x.iter().enumerate() {
            frames[[i, k]] = v.max(0.0);
        }
    }
    SpectralFrames { frames }
}

/// Recovers a waveform whose STFT magnitudes approximate `spec`.
///
/// The output has `(T - 1) * 256 + 1024` samples at 16 kHz.
pub fn griffin_lim(spec: &SpectralFrames, cfg: &GriffinLimConfig) -> AudioClip {
    griffin_lim_trace(spec, cfg).0
}

/// [`griffin_lim`] that also returns the spectral inconsistency
/// `||STFT(ISTFT(X_i)) - X_i||` measured at every iteration.
pub fn griffin_lim_trace(spec: &SpectralFrames, cfg: &GriffinLimConfig) -> (AudioClip, Vec<f64>) {
    let engine = StftEngine::new();
    let mags = &spec.frames;
    let t = mags.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut angles: Vec<Vec<Complex64>> = (0..t)
        .map(|_| {
            (0..N_BINS)
                .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()))
                .collect()
        })
        .collect();
    let mut prev: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); N_BINS]; t];
    let mix = cfg.momentum / (1.0 + cfg.momentum);
    let mut errors = Vec::with_capacity(cfg.iterations);

    let apply = |angles: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        angles
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(k, a)| a * mags[[i, k]]).collect())
            .collect()
    };

    for _ in 0..cfg.iterations {
        let current = apply(&angles);
        let signal = engine.synthesize(&current, 0.0);
        let rebuilt = engine.analyze(&signal);
        let err: f64 = current
            .iter()
            .zip(&rebuilt)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()))
            .sum::<f64>()
            .sqrt();
        errors.push(err);
        for i in 0..t {
            for k in 0..N_BINS {
                let z = rebuilt[i][k] - prev[i][k] * mix;
                let n = z.norm();
                angles[i][k] = if n > 0.0 { z / n } else { Complex64::default() };
            }
        }
        prev = rebuilt;
    }
    let samples = engine.synthesize(&apply(&angles), OUTPUT_NORM_FLOOR);
    (AudioClip::new(samples, SAMPLE_RATE), errors)
}

/// Magnitudes of a resynthesized clip, for consistency checks.
pub fn resynthesized_magnitudes(clip: &AudioClip) -> SpectralFrames {
    magnitudes(&StftEngine::new().analyze(&clip.samples))
}
