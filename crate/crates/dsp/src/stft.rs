//! Short-time Fourier analysis and least-squares overlap-add synthesis.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{DspError, Result};
use crate::{frame_count, samples_for_frames, HOP_LENGTH, N_BINS, WIN_LENGTH};

/// STFT magnitudes, one row per frame and `N_BINS` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    pub frames: Array2<f64>,
}

impl SpectralFrames {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != N_BINS {
            return Err(DspError::Shape(format!(
                "spectral frames need {N_BINS} bins, got {}",
                frames.ncols()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Forward/inverse transforms sharing one window and FFT plan.
pub struct StftEngine {
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Default for StftEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl StftEngine {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            window: hann_window(WIN_LENGTH),
            forward: planner.plan_fft_forward(WIN_LENGTH),
            inverse: planner.plan_fft_inverse(WIN_LENGTH),
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Complex half spectra of every full window in `samples`.
    pub fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex64>> {
        let n_frames = frame_count(samples.len());
        let mut buf = vec![Complex64::default(); WIN_LENGTH];
        (0..n_frames)
            .map(|t| {
                let start = t * HOP_LENGTH;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(samples[start + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..N_BINS].to_vec()
            })
            .collect()
    }

    /// Windowed overlap-add inverse.
    ///
    /// Each output sample is divided by `max(sum of squared windows, floor)`.
    /// With `floor == 0` this is the least-squares inverse of [`Self::analyze`];
    /// samples no window touches are left at zero.
    pub fn synthesize(&self, spectra: &[Vec<Complex64>], floor: f64) -> Vec<f64> {
        let len = samples_for_frames(spectra.len());
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::default(); WIN_LENGTH];
        for (t, half) in spectra.iter().enumerate() {
            buf[..N_BINS].copy_from_slice(half);
            // Rebuild the Hermitian upper half so the inverse is real.
            for k in N_BINS..WIN_LENGTH {
                buf[k] = half[WIN_LENGTH - k].conj();
            }
            buf[0].im = 0.0;
            buf[N_BINS - 1].im = 0.0;
            self.inverse.process(&mut buf);
            let start = t * HOP_LENGTH;
            for i in 0..WIN_LENGTH {
                let w = self.window[i];
                out[start + i] += w * buf[i].re / WIN_LENGTH as f64;
                norm[start + i] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            let d = n.max(floor);
            if d > 0.0 {
                *o /= d;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

/// Hann-windowed magnitude STFT (window 1024, hop 256, no padding).
pub fn stft_magnitude(clip: &AudioClip) -> Result<SpectralFrames> {
    clip.require_rate()?;
    if clip.len() < WIN_LENGTH {
        return Err(DspError::TooShort {
            samples: clip.len(),
            needed: WIN_LENGTH,
        });
    }
    let spectra = StftEngine::new().analyze(&clip.samples);
    Ok(magnitudes(&spectra))
}

pub(crate) fn magnitudes(spectra: &[Vec<Complex64>]) -> SpectralFrames {
    let mut frames = Array2::zeros((spectra.len(), N_BINS));
    for (t, half) in spectra.iter().enumerate() {
        for (k, c) in half.iter().enumerate() {
            frames[[t, k]] = c.norm();
        }
    }
    SpectralFrames { frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(n: usize, f: impl Fn(usize) -> f64) -> AudioClip {
        AudioClip::new((0..n).map(f).collect(), 16000)
    }

    /// Counts window start offsets by sliding one hop at a time.
    fn sliding_window_count(n: usize) -> usize {
        let mut count = 0;
        let mut start = 0;
        while start + WIN_LENGTH <= n {
            count += 1;
            start += HOP_LENGTH;
        }
        count
    }

    #[test]
    fn one_second_gives_59_frames() {
        assert_eq!(sliding_window_count(16000), 59);
        let s = stft_magnitude(&clip(16000, |i| (i as f64 * 0.01).sin() * 0.5)).unwrap();
        assert_eq!(s.frames.dim(), (59, N_BINS));
    }

    #[test]
    fn single_window() {
        let s = stft_magnitude(&clip(1024, |_| 0.1)).unwrap();
        assert_eq!(s.frame_count(), 1);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(matches!(
            stft_magnitude(&clip(1023, |_| 0.0)),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn wrong_rate_is_an_error() {
        let c = AudioClip::new(vec![0.0; 2048], 8000);
        assert!(matches!(stft_magnitude(&c), Err(DspError::SampleRate { .. })));
    }

    #[test]
    fn silence_is_exactly_zero() {
        let s = stft_magnitude(&clip(4000, |_| 0.0)).unwrap();
        assert!(s.frames.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn least_squares_inverse_reconstructs_interior() {
        let engine = StftEngine::new();
        let x: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let spectra = engine.analyze(&x);
        let y = engine.synthesize(&spectra, 0.0);
        assert_eq!(y.len(), samples_for_frames(spectra.len()));
        for i in 1..y.len() {
            assert!((x[i] - y[i]).abs() < 1e-6, "sample {i}: {} vs {}", x[i], y[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn frame_count_matches_sliding_windows(n in 1024usize..=50_000) {
            prop_assert_eq!(frame_count(n), sliding_window_count(n));
        }

        #[test]
        fn magnitudes_are_positively_homogeneous(a in 0.01f64..10.0, seed in 0u64..1000) {
            let base = clip(3000, |i| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0) - 0.5);
            let s1 = stft_magnitude(&base).unwrap();
            let s2 = stft_magnitude(&base.scaled(a)).unwrap();
            for (x, y) in s1.frames.iter().zip(s2.frames.iter()) {
                prop_assert!((a * x - y).abs() <= 1e-6 * (a * x).abs().max(1e-9));
            }
        }
    }
}
