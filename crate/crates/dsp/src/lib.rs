//! Acoustic front end for the dstts voice-cloning stack.
//!
//! Everything here works at 16 kHz with a 1024-sample Hann window and a
//! hop of 256 samples. Frames are taken strictly inside the signal (no
//! padding), so an `N`-sample clip yields `(N - 1024) / 256 + 1` frames.
//!
//! The pipeline is
//!
//! ```text
//! wav -> AudioClip -> SpectralFrames -> MelSpectrogram -> MfccSequence
//!                  \-> pitch (per frame)  \-> energy (per frame)
//! ```
//!
//! plus the inverse direction used for listening to model output
//! ([`griffin_lim`]).

pub mod audio;
pub mod error;
pub mod griffin_lim;
pub mod mel;
pub mod pitch;
pub mod prosody;
pub mod stft;
pub mod tensor_file;

pub use audio::{load_audio, write_wav, AudioClip};
pub use error::{DspError, Result};
pub use griffin_lim::{griffin_lim, invert_mel, GriffinLimConfig};
pub use mel::{mel_spectrogram, mfcc, MelFilterbank, MelSpectrogram, MfccSequence};
pub use pitch::extract_pitch;
pub use prosody::{extract_energy, phoneme_average, phoneme_average_voiced};
pub use stft::{stft_magnitude, SpectralFrames};

/// Sample rate every clip is converted to on ingestion.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis window length in samples.
pub const WIN_LENGTH: usize = 1024;
/// Hop between consecutive frames in samples.
pub const HOP_LENGTH: usize = 256;
/// Number of magnitude bins of a `WIN_LENGTH`-point transform.
pub const N_BINS: usize = WIN_LENGTH / 2 + 1;
pub const N_MELS: usize = 80;
pub const N_MFCC: usize = 20;
/// Floor applied before taking the log of mel energies.
pub const LOG_FLOOR: f64 = 1e-5;

/// Number of full analysis windows that fit in `n_samples` samples.
pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < WIN_LENGTH {
        0
    } else {
        (n_samples - WIN_LENGTH) / HOP_LENGTH + 1
    }
}

/// Number of samples produced by overlap-adding `frames` frames.
pub fn samples_for_frames(frames: usize) -> usize {
    if frames == 0 {
        0
    } else {
        (frames - 1) * HOP_LENGTH + WIN_LENGTH
    }
}
