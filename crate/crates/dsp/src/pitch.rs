//! Frame-level F0 estimation by normalized autocorrelation.

use crate::audio::AudioClip;
use crate::{frame_count, HOP_LENGTH, SAMPLE_RATE, WIN_LENGTH};

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
/// Minimum normalized autocorrelation peak for a frame to count as voiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Earliest peak within this fraction of the global maximum wins, which
/// keeps period multiples from being picked as the fundamental.
const OCTAVE_TOLERANCE: f64 = 0.9;
const SILENCE_ENERGY: f64 = 1e-10;

/// One F0 value in Hz per STFT frame; 0 marks unvoiced frames.
///
/// Frames are aligned with [`crate::stft_magnitude`], so the output has the
/// same length as the mel spectrogram of the clip.
pub fn extract_pitch(clip: &AudioClip) -> Vec<f64> {
    let rate = clip.sample_rate as f64;
    debug_assert_eq!(clip.sample_rate, SAMPLE_RATE);
    let min_lag = (rate / F0_MAX_HZ).ceil() as usize;
    let max_lag = ((rate / F0_MIN_HZ).floor() as usize).min(WIN_LENGTH - 2);
    (0..frame_count(clip.len()))
        .map(|t| {
            let start = t * HOP_LENGTH;
            frame_f0(&clip.samples[start..start + WIN_LENGTH], rate, min_lag, max_lag)
        })
        .collect()
}

fn frame_f0(raw: &[f64], rate: f64, min_lag: usize, max_lag: usize) -> f64 {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let x: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    if x.iter().map(|v| v * v).sum::<f64>() < SILENCE_ENERGY {
        return 0.0;
    }
    let n = x.len();
    // prefix[i] = sum of x[..i]^2
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i] * x[i];
    }
    // Lags from min_lag - 1 to max_lag + 1 so interpolation has neighbours.
    let lo = min_lag - 1;
    let hi = max_lag + 1;
    let corr: Vec<f64> = (lo..=hi)
        .map(|lag| {
            let m = n - lag;
            let cross: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            let e0 = prefix[m];
            let e1 = prefix[n] - prefix[lag];
            let denom = (e0 * e1).sqrt();
            if denom > 0.0 {
                cross / denom
            } else {
                0.0
            }
        })
        .collect();
    let at = |lag: usize| corr[lag - lo];
    let peak = (min_lag..=max_lag).map(at).fold(f64::MIN, f64::max);
    if peak < VOICING_THRESHOLD {
        return 0.0;
    }
    let best = (min_lag..=max_lag)
        .find(|&lag| {
            let r = at(lag);
            r >= OCTAVE_TOLERANCE * peak && r >= at(lag - 1) && r >= at(lag + 1)
        })
        .unwrap_or(min_lag);
    let (a, b, c) = (at(best - 1), at(best), at(best + 1));
    let curvature = a - 2.0 * b + c;
    let offset = if curvature.abs() > 1e-12 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    rate / (best as f64 + offset)
}
