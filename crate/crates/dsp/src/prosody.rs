//! Frame energy and frame-to-phoneme averaging.

use crate::error::{DspError, Result};
use crate::stft::SpectralFrames;

/// L2 norm of each magnitude frame.
pub fn extract_energy(spec: &SpectralFrames) -> Vec<f64> {
    spec.frames
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|m| m * m).sum::<f64>().sqrt())
        .collect()
}

fn check_spans(frame_values: &[f64], durations: &[usize]) -> Result<()> {
    let sum: usize = durations.iter().sum();
    if sum != frame_values.len() {
        return Err(DspError::DurationMismatch {
            sum,
            frames: frame_values.len(),
        });
    }
    Ok(())
}

/// Mean of each phoneme's span of frames; empty spans give 0.
pub fn phoneme_average(frame_values: &[f64], durations: &[usize]) -> Result<Vec<f64>> {
    check_spans(frame_values, durations)?;
    let mut start = 0;
    Ok(durations
        .iter()
        .map(|&d| {
            let span = &frame_values[start..start + d];
            start += d;
            if d == 0 {
                0.0
            } else {
                span.iter().sum::<f64>() / d as f64
            }
        })
        .collect())
}

/// Like [`phoneme_average`] but only averages voiced (nonzero) frames, so
/// unvoiced frames do not drag pitch towards zero. Fully unvoiced spans give 0.
pub fn phoneme_average_voiced(frame_values: &[f64], durations: &[usize]) -> Result<Vec<f64>> {
    check_spans(frame_values, durations)?;
    let mut start = 0;
    Ok(durations
        .iter()
        .map(|&d| {
            let span = &frame_values[start..start + d];
            start += d;
            let (sum, count) = span
                .iter()
                .filter(|&&v| v > 0.0)
                .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect())
}
