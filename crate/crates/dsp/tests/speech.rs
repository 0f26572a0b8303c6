//! Checks that need real recorded speech (CMU ARCTIC `arctic_a0007`, see
//! `tests/data/COPYING.arctic`).

use dstts_dsp::griffin_lim::resynthesized_magnitudes;
use dstts_dsp::{
    extract_energy, extract_pitch, griffin_lim, invert_mel, load_audio, mel_spectrogram, mfcc,
    stft_magnitude, GriffinLimConfig, N_MELS, N_MFCC,
};

fn speech() -> dstts_dsp::AudioClip {
    load_audio(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/arctic_a0007.wav")).unwrap()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn features_have_consistent_frame_counts() {
    let clip = speech();
    let spec = stft_magnitude(&clip).unwrap();
    let mel = mel_spectrogram(&spec);
    let m = mfcc(&mel);
    let t = spec.frame_count();
    assert_eq!(mel.frames.dim(), (t, N_MELS));
    assert_eq!(m.frames.dim(), (t, N_MFCC));
    assert_eq!(extract_pitch(&clip).len(), t);
    assert_eq!(extract_energy(&spec).len(), t);
    assert!(mel.frames.iter().all(|v| v.is_finite()));
}

#[test]
fn pitch_is_in_a_plausible_range() {
    let f0 = extract_pitch(&speech());
    let mut voiced: Vec<f64> = f0.into_iter().filter(|&f| f > 0.0).collect();
    assert!(voiced.len() > 20);
    voiced.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = voiced[voiced.len() / 2];
    assert!((70.0..300.0).contains(&median), "median {median}");
}

#[test]
fn mel_inversion_round_trip_within_half_a_log_unit() {
    let mel = mel_spectrogram(&stft_magnitude(&speech()).unwrap());
    let back = mel_spectrogram(&invert_mel(&mel));
    let worst = (&back.frames - &mel.frames)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 0.5, "worst per-cell error {worst}");
}

#[test]
fn griffin_lim_is_self_consistent_on_speech() {
    let spec = stft_magnitude(&speech()).unwrap();
    let clip = griffin_lim(&spec, &GriffinLimConfig::default());
    let again = resynthesized_magnitudes(&clip);
    assert_eq!(again.frames.dim(), spec.frames.dim());
    let r = pearson(
        spec.frames.as_slice().unwrap(),
        again.frames.as_slice().unwrap(),
    );
    assert!(r >= 0.9, "pearson r = {r}");
}
