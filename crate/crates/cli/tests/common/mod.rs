#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dstts_dsp::{frame_count, load_audio, write_wav, AudioClip};
use serde_json::json;

pub const ARCTIC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../dsp/tests/data/arctic_a0007.wav");

pub fn speech() -> AudioClip {
    load_audio(ARCTIC).unwrap()
}

/// Samples `[start, end)` of the recording.
pub fn crop(start: usize, end: usize) -> AudioClip {
    AudioClip::new(speech().samples[start..end].to_vec(), dstts_dsp::SAMPLE_RATE)
}

/// `n` durations that cover `frames` as evenly as possible.
pub fn uniform_durations(frames: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| frames / n + usize::from(i < frames % n)).collect()
}

pub fn phoneme_labels(n: usize, offset: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{}", (i * 3 + offset) % 7)).collect()
}

pub fn manifest_line(id: &str, wav: &str, phonemes: &[String], durations: &[usize]) -> String {
    json!({"id": id, "wav": wav, "phonemes": phonemes, "durations": durations}).to_string()
}

/// Model small enough for many end-to-end runs.
pub fn small_model() -> serde_json::Value {
    json!({
        "hidden": 16,
        "filter": 16,
        "kernel": 3,
        "encoder_blocks": 1,
        "decoder_blocks": 1,
        "style_hidden": 8,
        "variance_filter": 8
    })
}

/// Two one-second utterances cut from the recording, with durations off by
/// one frame so that reconciliation is exercised, and a run configuration
/// pointing at them.
pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = Vec::new();
        for (id, start, n) in [("a", 8000, 10), ("b", 24000, 12)] {
            let clip = crop(start, start + 16000);
            write_wav(dir.path().join(format!("{id}.wav")), &clip).unwrap();
            let mut d = uniform_durations(frame_count(clip.len()), n);
            *d.last_mut().unwrap() -= 1;
            lines.push(manifest_line(id, &format!("{id}.wav"), &phoneme_labels(n, start), &d));
        }
        fs::write(dir.path().join("manifest.jsonl"), lines.join("\n") + "\n").unwrap();
        let f = Self { dir };
        f.write_config(&json!({
            "model": small_model(),
            "lr": 1e-3,
            "batch": 2,
            "steps": 4,
            "checkpoint_every": 2,
            "manifest": f.path("manifest.jsonl"),
            "features": f.path("features"),
            "output": f.path("run"),
        }));
        f
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("run.json")
    }

    pub fn write_config(&self, value: &serde_json::Value) {
        fs::write(self.config(), serde_json::to_string_pretty(value).unwrap()).unwrap();
    }

    /// Runs the binary with `--config` pointing at the fixture's run file.
    pub fn dstts(&self, args: &[&str]) -> Output {
        let config = self.config();
        let mut all = vec!["--config", config.to_str().unwrap()];
        all.extend_from_slice(args);
        dstts(&all, self.dir.path())
    }
}

pub fn dstts(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dstts"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

pub fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

pub fn assert_ok(out: &Output) {
    assert!(out.status.success(), "dstts failed ({:?}):\n{}", out.status.code(), text(out));
}

/// Training log with wall-clock times removed.
pub fn log_without_time(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}
