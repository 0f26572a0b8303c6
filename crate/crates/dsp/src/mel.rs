//! Mel filterbank, log-mel spectrogram and MFCCs.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{DspError, Result};
use crate::stft::SpectralFrames;
use crate::{LOG_FLOOR, N_BINS, N_MELS, N_MFCC, SAMPLE_RATE, WIN_LENGTH};

/// Frames below this L2 norm are left as zeros by [`mfcc`].
pub const MFCC_ZERO_NORM: f64 = 1e-12;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank over 0–8000 Hz, each filter scaled to
/// unit area (`2 / (upper - lower)` peak height).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `N_MELS x N_BINS` weights.
    pub weights: Array2<f64>,
    /// Centre frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    /// Half-open range of bins where each filter is nonzero.
    pub(crate) support: Vec<(usize, usize)>,
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFilterbank {
    pub fn new() -> Self {
        let f_max = SAMPLE_RATE as f64 / 2.0;
        let m_max = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(m_max * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / WIN_LENGTH as f64;
        let mut weights = Array2::zeros((N_MELS, N_BINS));
        let mut support = Vec::with_capacity(N_MELS);
        for m in 0..N_MELS {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let height = 2.0 / (hi - lo);
            let mut first = N_BINS;
            let mut last = 0;
            for k in 0..N_BINS {
                let f = bin_hz(k);
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    weights[[m, k]] = w * height;
                    first = first.min(k);
                    last = k + 1;
                }
            }
            support.push((first.min(last), last));
        }
        Self {
            weights,
            centers_hz: edges[1..=N_MELS].to_vec(),
            support,
        }
    }

    /// Applies the filterbank to one magnitude frame.
    pub(crate) fn apply_frame(&self, frame: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (a, b) = self.support[m];
            let row = self.weights.row(m);
            *o = (a..b).map(|k| row[k] * frame[k]).sum();
        }
    }

    /// Transposed application: mel energies back onto linear bins.
    pub(crate) fn apply_transpose(&self, mel: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (m, &v) in mel.iter().enumerate() {
            let (a, b) = self.support[m];
            let row = self.weights.row(m);
            for k in a..b {
                out[k] += row[k] * v;
            }
        }
    }
}

/// Log-mel spectrogram, one row per frame and `N_MELS` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != N_MELS {
            return Err(DspError::Shape(format!(
                "mel spectrogram needs {N_MELS} channels, got {}",
                frames.ncols()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }
}

/// Unit-norm MFCC frames with `N_MFCC` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    pub frames: Array2<f64>,
}

impl MfccSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != N_MFCC {
            return Err(DspError::Shape(format!(
                "MFCC sequence needs {N_MFCC} coefficients, got {}",
                frames.ncols()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }
}

/// Natural-log mel spectrogram with a floor of [`LOG_FLOOR`].
pub fn mel_spectrogram(spec: &SpectralFrames) -> MelSpectrogram {
    mel_spectrogram_with(&MelFilterbank::new(), spec)
}

pub fn mel_spectrogram_with(bank: &MelFilterbank, spec: &SpectralFrames) -> MelSpectrogram {
    let t = spec.frame_count();
    let mut frames = Array2::zeros((t, N_MELS));
    let mut buf = vec![0.0; N_MELS];
    for (i, row) in spec.frames.rows().into_iter().enumerate() {
        let row = row.to_vec();
        bank.apply_frame(&row, &mut buf);
        for (m, &v) in buf.iter().enumerate() {
            frames[[i, m]] = v.max(LOG_FLOOR).ln();
        }
    }
    MelSpectrogram { frames }
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
pub fn dct_ii_matrix(n_in: usize, n_out: usize) -> Array2<f64> {
    let mut basis = Array2::zeros((n_out, n_in));
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            basis[[k, n]] = scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos();
        }
    }
    basis
}

/// DCT-II of each log-mel frame, truncated to 20 coefficients and scaled to
/// unit L2 norm. Frames with norm below [`MFCC_ZERO_NORM`] become zeros.
pub fn mfcc(mel: &MelSpectrogram) -> MfccSequence {
    let basis = dct_ii_matrix(N_MELS, N_MFCC);
    let mut coeffs = mel.frames.dot(&basis.t());
    for mut row in coeffs.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < MFCC_ZERO_NORM {
            row.fill(0.0);
        } else {
            row.mapv_inplace(|v| v / norm);
        }
    }
    MfccSequence { frames: coeffs }
}
