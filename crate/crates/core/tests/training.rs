mod common;

use common::{stats_for, synthetic_example};
use dstts_core::graph::Graph;
use dstts_core::loss::{compute_losses, loss_graph, Predictions, Targets};
use dstts_core::model::ForwardInput;
use dstts_core::params::{Gradients, ParamStore};
use dstts_core::train::batch_loss;
use dstts_core::variance::AdaptorMode;
use dstts_core::{Adam, AdamConfig, Branch, Checkpoint, DsTts, FeatureStats, ModelConfig, Trainer, Vocabulary};
use ndarray::array;

fn small_config(threshold: usize) -> ModelConfig {
    ModelConfig {
        dva_threshold: threshold,
        ..ModelConfig::tiny(6)
    }
}

#[test]
fn adam_single_step_matches_hand_arithmetic() {
    let mut store = ParamStore::new();
    store.insert("p", array![[0.0]]);
    let mut adam = Adam::new(
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        &store,
    );
    adam.step(&mut store, &Gradients { grads: vec![array![[1.0]]] }).unwrap();
    let m = 0.1;
    let v = 0.02;
    let m_hat = m / (1.0 - 0.9);
    let v_hat = v / (1.0 - 0.98);
    let expected = -1e-3 * m_hat / (f64::sqrt(v_hat) + 1e-9);
    assert!((adam.m[0][[0, 0]] - m).abs() < 1e-15);
    assert!((adam.v[0][[0, 0]] - v).abs() < 1e-15);
    assert!((store.by_name("p").unwrap()[[0, 0]] - expected).abs() < 1e-9);
    assert!((expected + 1e-3).abs() < 1e-9);
    assert_eq!(adam.t, 1);

    let before = store.clone();
    let mut fresh = Adam::new(AdamConfig::default(), &store);
    fresh.step(&mut store, &Gradients::zeros_like(&before)).unwrap();
    assert_eq!(store, before);
    assert_eq!(fresh.t, 1);
}

#[test]
fn inactive_branch_receives_exactly_zero_gradient() {
    for (len, threshold, active) in [(4, 10, Branch::Short), (8, 5, Branch::Long)] {
        let model = DsTts::new(small_config(threshold), 2).unwrap();
        let batch = vec![synthetic_example("u", len, 6, len as u64)];
        let stats = stats_for(&batch);
        let (_, grads) = batch_loss(&model, &stats, &batch, Some(5)).unwrap();
        let inactive = match active {
            Branch::Short => "_long.",
            Branch::Long => "_short.",
        };
        let active_tag = match active {
            Branch::Short => "_short.",
            Branch::Long => "_long.",
        };
        let mut saw_active = false;
        for (id, name, _) in model.params.iter() {
            if name.contains(inactive) {
                assert!(grads.get(id).iter().all(|&g| g == 0.0), "{name}");
            }
            if name.contains(active_tag) && grads.get(id).iter().any(|&g| g != 0.0) {
                saw_active = true;
            }
        }
        assert!(saw_active);
    }
}

#[test]
fn loss_is_additive_nonnegative_and_matches_plain_evaluation() {
    let model = DsTts::new(small_config(4), 9).unwrap();
    let batch = vec![synthetic_example("a", 3, 6, 1), synthetic_example("b", 6, 6, 2)];
    let stats = stats_for(&batch);
    let mut g = Graph::new(&model.params);
    let outs: Vec<_> = batch.iter().map(|ex| model.forward_teacher(&mut g, ex, &stats).unwrap()).collect();
    let targets: Vec<Targets> = batch.iter().map(|ex| Targets::from_example(ex, &stats)).collect();
    let vars = loss_graph(&mut g, &outs, &targets).unwrap();
    let b = vars.breakdown(&g);
    assert_eq!(b.total.to_bits(), (((b.l_rec + b.l_d) + b.l_e) + b.l_p).to_bits());
    assert_eq!(b.total.to_bits(), g.scalar(vars.total).to_bits());
    assert!(b.l_rec >= 0.0 && b.l_d >= 0.0 && b.l_e >= 0.0 && b.l_p >= 0.0);

    let col = |v| g.value(v).iter().copied().collect::<Vec<f64>>();
    let pairs: Vec<(Predictions, Targets)> = outs
        .iter()
        .zip(&targets)
        .map(|(o, t)| {
            (
                Predictions {
                    mel: g.value(o.mel).clone(),
                    log_duration: col(o.adaptor.predictions.log_duration),
                    pitch: col(o.adaptor.predictions.pitch),
                    energy: col(o.adaptor.predictions.energy),
                },
                t.clone(),
            )
        })
        .collect();
    let plain = compute_losses(&pairs).unwrap();
    for (x, y) in [(plain.l_rec, b.l_rec), (plain.l_d, b.l_d), (plain.l_e, b.l_e), (plain.l_p, b.l_p)] {
        assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
    }

    let perfect: Vec<(Predictions, Targets)> = targets
        .iter()
        .map(|t| {
            (
                Predictions {
                    mel: t.mel.clone(),
                    log_duration: t.durations.iter().map(|&d| (d as f64).ln_1p()).collect(),
                    pitch: t.pitch.clone(),
                    energy: t.energy.clone(),
                },
                t.clone(),
            )
        })
        .collect();
    let zero = compute_losses(&perfect).unwrap();
    assert_eq!(zero.total, 0.0);

    let mut one_off = perfect.clone();
    for (p, _) in &mut one_off {
        p.energy.iter_mut().for_each(|e| *e = 0.0);
    }
    let only_e = compute_losses(&one_off).unwrap();
    assert_eq!((only_e.l_rec, only_e.l_d, only_e.l_p), (0.0, 0.0, 0.0));
    assert!(only_e.l_e > 0.0);
}

fn improved_seeds(config: &ModelConfig) -> usize {
    let mut improved = 0;
    for seed in 0..20 {
        let model = DsTts::new(config.clone(), seed).unwrap();
        let batch = vec![synthetic_example("u", 5, 6, 100 + seed)];
        let stats = stats_for(&batch);
        let mut trainer = Trainer::new(model, AdamConfig::default(), stats, seed);
        let first = trainer.train_step(&batch).unwrap();
        let second = trainer.train_step(&batch).unwrap();
        if second.total < first.total {
            improved += 1;
        }
    }
    improved
}

/// Each step draws fresh dropout masks, so with dropout on the step-to-step
/// change is dominated by mask noise; the optimiser direction is checked
/// on the deterministic objective.
#[test]
fn second_step_improves_on_most_seeds() {
    let deterministic = ModelConfig {
        dropout: 0.0,
        variance_dropout: 0.0,
        ..small_config(85)
    };
    let improved = improved_seeds(&deterministic);
    println!(
        "second step improved on {improved}/20 seeds ({}/20 with dropout)",
        improved_seeds(&small_config(85))
    );
    assert!(improved >= 19, "only {improved}/20 seeds improved");
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let run = || {
        let model = DsTts::new(small_config(4), 5).unwrap();
        let batch = vec![synthetic_example("a", 3, 6, 1), synthetic_example("b", 6, 6, 2)];
        let stats = stats_for(&batch);
        let mut trainer = Trainer::new(model, AdamConfig::default(), stats, 5);
        (0..5).map(|_| trainer.train_step(&batch).unwrap().total.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_preserves_forward_pass() {
    let vocab = Vocabulary::from_corpus(["a", "b", "c", "d", "e"]);
    let mut model = DsTts::new(small_config(85), 4).unwrap();
    model.params.round_to_f32();
    let ex = synthetic_example("u", 5, 6, 3);
    let ck = Checkpoint {
        model,
        run: serde_json::json!({}),
        vocabulary: vocab,
        stats: FeatureStats::default(),
        step: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dsck");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let a = ck.model.synthesize(&ex.phonemes, &ex.mel, &ex.mfcc).unwrap();
    let b = loaded.model.synthesize(&ex.phonemes, &ex.mel, &ex.mfcc).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(&path).unwrap(), loaded.encode().unwrap());
}

#[test]
fn style_conditions_encoder_after_training() {
    let model = DsTts::new(small_config(85), 6).unwrap();
    let batch = vec![synthetic_example("a", 5, 6, 1), synthetic_example("b", 5, 6, 2)];
    let stats = stats_for(&batch);
    let mut trainer = Trainer::new(model, AdamConfig::default(), stats, 6);
    for _ in 0..10 {
        trainer.train_step(&batch).unwrap();
    }
    let model = &trainer.model;
    let encode = |ex: &dstts_core::TrainingExample| {
        let mut g = Graph::new(&model.params);
        let out = model
            .forward(
                &mut g,
                &ForwardInput {
                    phonemes: &batch[0].phonemes,
                    reference_mel: &ex.mel,
                    reference_mfcc: &ex.mfcc,
                },
                AdaptorMode::Inference,
            )
            .unwrap();
        g.value(out.hidden).clone()
    };
    let a = encode(&batch[0]);
    let b = encode(&batch[1]);
    assert_eq!(a, encode(&batch[0]));
    let diff = (&a - &b).mapv(f64::abs).sum();
    assert!(diff > 1e-6, "style change moved encoder output by {diff}");
}
