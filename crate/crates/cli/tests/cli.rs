mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use dstts_cli::config::RunConfig;
use dstts_cli::preprocess::{FEATURES, INDEX_FILE, STATS_FILE};
use dstts_core::metrics::parse_markdown;
use dstts_core::{Checkpoint, EvalReport};
use dstts_dsp::tensor_file::Tensor;
use serde_json::json;

fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn preprocess_writes_four_features_per_utterance_and_is_idempotent() {
    let f = Fixture::new();
    assert_ok(&f.dstts(&["preprocess"]));
    let features = f.path("features");
    let first = snapshot(&features);
    let tensors: Vec<_> = first.keys().filter(|k| k.ends_with(".dstt")).collect();
    assert_eq!(tensors.len(), 8, "{:?}", first.keys());
    for id in ["a", "b"] {
        for feat in FEATURES {
            assert!(first.contains_key(&format!("{id}.{feat}.dstt")));
        }
    }
    assert!(first.contains_key(STATS_FILE));

    let mel = Tensor::load(features.join("a.mel.dstt")).unwrap();
    assert_eq!(mel.dims, vec![59, 80]);
    let index = fs::read_to_string(features.join(INDEX_FILE)).unwrap();
    let first_rec: serde_json::Value = serde_json::from_str(index.lines().next().unwrap()).unwrap();
    let durations: Vec<usize> = serde_json::from_value(first_rec["durations"].clone()).unwrap();
    assert_eq!(durations.iter().sum::<usize>(), 59, "off-by-one durations are reconciled");

    assert_ok(&f.dstts(&["preprocess"]));
    assert_eq!(snapshot(&features), first);
}

#[test]
fn three_frame_mismatch_is_rejected_with_a_diagnostic() {
    let f = Fixture::new();
    let clip = crop(8000, 24000);
    let mut lines = Vec::new();
    for i in 0..10 {
        let wav = format!("u{i}.wav");
        dstts_dsp::write_wav(f.path(&wav), &clip).unwrap();
        let mut d = uniform_durations(59, 10);
        if i == 0 {
            d[0] += 3;
        }
        lines.push(manifest_line(&format!("u{i}"), &wav, &phoneme_labels(10, 0), &d));
    }
    fs::write(f.path("manifest.jsonl"), lines.join("\n")).unwrap();
    let out = f.dstts(&["preprocess"]);
    assert_ok(&out);
    let log = text(&out);
    assert!(log.contains("rejected utterance u0") && log.contains("sum to 62 but there are 59 frames"), "{log}");
    assert!(!f.path("features/u0.mel.dstt").exists());
    assert!(f.path("features/u1.mel.dstt").exists());

    // Two failures out of ten exceed the tolerated tenth.
    lines[1] = manifest_line("u1", "missing.wav", &phoneme_labels(10, 0), &uniform_durations(59, 10));
    fs::write(f.path("manifest.jsonl"), lines.join("\n")).unwrap();
    let out = f.dstts(&["preprocess"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
}

#[test]
fn resolved_config_round_trips_through_the_binary() {
    let f = Fixture::new();
    let out = f.dstts(&["--seed", "9", "--no-dva-lp", "--dva-threshold", "40", "config"]);
    assert_ok(&out);
    let printed = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::from_json(&printed).unwrap();
    assert_eq!((cfg.seed, cfg.model.dva_threshold, cfg.steps), (9, 40, 4));
    assert!(cfg.model.no_dva_lp && !cfg.model.no_mfcc);
    assert_eq!(cfg.to_json().unwrap(), printed);

    fs::write(f.config(), &printed).unwrap();
    let again = f.dstts(&["config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), printed);
}

#[test]
fn invalid_input_exits_with_one() {
    let f = Fixture::new();
    assert_eq!(f.dstts(&["--dva-threshold", "0", "config"]).status.code(), Some(1));
    assert_eq!(f.dstts(&["--bogus", "config"]).status.code(), Some(1));
    assert_eq!(f.dstts(&["train"]).status.code(), Some(1), "no feature cache yet");
    assert!(f.dstts(&["--help"]).status.success());
}

#[test]
fn training_is_deterministic_and_records_its_configuration() {
    let f = Fixture::new();
    assert_ok(&f.dstts(&["preprocess"]));
    assert_ok(&f.dstts(&["--out", "r1", "--steps", "10", "--seed", "7", "train"]));
    assert_ok(&f.dstts(&["--out", "r2", "--steps", "10", "--seed", "7", "train"]));
    let a = log_without_time(&f.path("r1/train_log.jsonl"));
    assert_eq!(a.len(), 10);
    assert_eq!(a, log_without_time(&f.path("r2/train_log.jsonl")));
    assert_eq!(a[9]["step"], 10);
    for key in ["l_rec", "l_d", "l_e", "l_p", "total"] {
        assert!(a[0][key].as_f64().unwrap() >= 0.0);
    }
    let other = Checkpoint::load(&f.path("r2/final.dsck")).unwrap();
    for step in [2, 4, 6, 8] {
        assert!(f.path(&format!("r1/step_{step:07}.dsck")).exists());
    }
    let ck = Checkpoint::load(&f.path("r1/final.dsck")).unwrap();
    assert!(ck.model.params == other.model.params, "same seed, same weights");
    assert_eq!(ck.step, 10);
    assert_eq!(ck.run["seed"], 7);
    assert_eq!(ck.run["model"]["vocab_size"], ck.vocabulary.len());
    let recorded = RunConfig::from_json(&fs::read_to_string(f.path("r1/config.json")).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&recorded).unwrap(), ck.run);
}

#[test]
fn numerical_blow_up_exits_with_two_and_keeps_the_last_good_checkpoint() {
    let f = Fixture::new();
    assert_ok(&f.dstts(&["preprocess"]));
    // One update of this size still fits f32 and is checkpointed; the
    // next forward pass overflows.
    let out = f.dstts(&["--lr", "1e37", "--checkpoint-every", "1", "--out", "blow", "train"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    let good = f.path("blow/step_0000001.dsck");
    assert!(text(&out).contains("last good checkpoint: blow/step_0000001.dsck"), "{}", text(&out));
    assert!(!f.path("blow/final.dsck").exists());
    let ck = Checkpoint::load(&good).unwrap();
    assert_eq!(ck.step, 1);
    assert_eq!(log_without_time(&f.path("blow/train_log.jsonl")).len(), 1);

    // Past f32 range even the first checkpoint cannot be written.
    let out = f.dstts(&["--lr", "1e200", "--checkpoint-every", "1", "--out", "blow2", "train"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("last good checkpoint: none"));
    assert!(!f.path("blow2/step_0000001.dsck").exists());
}

fn trained(f: &Fixture) {
    assert_ok(&f.dstts(&["preprocess"]));
    assert_ok(&f.dstts(&["train"]));
}

#[test]
fn routing_branch_is_reported_at_the_threshold() {
    let f = Fixture::new();
    trained(&f);
    let ck = f.path("run/final.dsck");
    for (n, branch) in [(85, "Short"), (86, "Long")] {
        let phonemes = phoneme_labels(n, 1).join(" ");
        let wav = format!("out{n}.wav");
        let out = f.dstts(&[
            "synthesize",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--phonemes",
            &phonemes,
            "--reference",
            "a.wav",
            "--wav",
            &wav,
        ]);
        assert_ok(&out);
        let log = text(&out);
        assert!(log.contains(&format!("branch={branch}")), "{n}: {log}");
        let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path(&format!("out{n}.json"))).unwrap()).unwrap();
        assert_eq!(side["branch"], branch);
        assert_eq!(side["config"]["model"]["dva_threshold"], 85);
    }
}

#[test]
fn synthesis_rejects_unknown_phonemes_and_short_references() {
    let f = Fixture::new();
    trained(&f);
    let ck = f.path("run/final.dsck");
    let base = ["synthesize", "--checkpoint", ck.to_str().unwrap(), "--wav", "x.wav"];
    let unknown = f.dstts(&[&base[..], &["--phonemes", "p1 zz", "--reference", "a.wav"]].concat());
    assert_eq!(unknown.status.code(), Some(1));
    assert!(text(&unknown).contains("zz"));
    dstts_dsp::write_wav(f.path("tiny.wav"), &crop(8000, 8500)).unwrap();
    let short = f.dstts(&[&base[..], &["--phonemes", "p1", "--reference", "tiny.wav"]].concat());
    assert_eq!(short.status.code(), Some(1));
    let missing = f.dstts(&[&base[..], &["--phonemes", "p1", "--reference", "nope.wav"]].concat());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn eval_scores_pairs_with_model_or_external_embeddings() {
    let f = Fixture::new();
    trained(&f);
    fs::write(
        f.path("pairs.jsonl"),
        [
            json!({"ref_wav": "a.wav", "syn_wav": "a.wav", "id": "same"}).to_string(),
            json!({"ref_wav": "a.wav", "syn_wav": "b.wav"}).to_string(),
        ]
        .join("\n"),
    )
    .unwrap();
    let ck = f.path("run/final.dsck");
    let out = f.dstts(&["--out", "ev", "eval", "--pairs", "pairs.jsonl", "--checkpoint", ck.to_str().unwrap()]);
    assert_ok(&out);
    let reports: Vec<EvalReport> = serde_json::from_str(&fs::read_to_string(f.path("ev/eval.json")).unwrap()).unwrap();
    let r = &reports[0];
    assert_eq!(r.pairs[0].id, "same");
    assert!((r.pairs[0].smcs - 1.0).abs() < 1e-12);
    assert_eq!(r.pairs[0].mel_mae, Some(0.0));
    assert_eq!(r.pairs[1].id, "b");
    assert!(r.metadata.embedder.contains("proxy"));
    let rows = parse_markdown(&fs::read_to_string(f.path("ev/eval.md")).unwrap()).unwrap();
    assert_eq!(rows, vec![r.row()]);

    let emb = f.path("emb");
    fs::create_dir(&emb).unwrap();
    Tensor::from_vec(&[1.0, 0.0]).save(emb.join("a.dstt")).unwrap();
    Tensor::from_vec(&[1.0, 1.0]).save(emb.join("b.dstt")).unwrap();
    let out = f.dstts(&["--out", "ev2", "eval", "--pairs", "pairs.jsonl", "--embeddings", "emb", "--method", "external"]);
    assert_ok(&out);
    let reports: Vec<EvalReport> = serde_json::from_str(&fs::read_to_string(f.path("ev2/eval.json")).unwrap()).unwrap();
    assert!((reports[0].pairs[1].smcs - 0.5f64.sqrt()).abs() < 1e-7);
    assert_eq!(reports[0].metadata.checkpoint, "none");
}
