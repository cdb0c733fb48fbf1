//! Evaluation tests: freeze/fine-tune contracts, best-epoch selection,
//! metric arithmetic against hand-computed values, and aggregation.

use super::*;

use crate::data::tokenize_text;
use crate::model::{weight_hash, EncoderConfig, InitKind, ProjectorConfig};
use crate::rng;
use crate::tensor::ParamStore;
use crate::train::{train_supervised, Regime, TrainConfig};
use rand::Rng;

const MAX_LEN: usize = 24;

fn tiny_encoder(vocab: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        heads: 2,
        hidden_dim: 8,
        ff_dim: 16,
        max_len: MAX_LEN,
        vocab_size: vocab,
        init: InitKind::Random,
    }
}

const CLASS_WORDS: [[&str; 3]; 4] = [
    ["alpha", "apple", "anchor"],
    ["bravo", "berry", "bridge"],
    ["comet", "coral", "candle"],
    ["delta", "daisy", "dune"],
];
const FILLERS: [&str; 4] = ["the", "of", "and", "with"];

fn toy_corpus(per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut corpus_rng = rng::stream(seed, "eval-test-corpus", &[]);
    let mut out = Vec::new();
    for class in 0..4 {
        for _ in 0..per_class {
            let len = corpus_rng.random_range(3..6usize);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                if corpus_rng.random::<f64>() < 0.7 {
                    words.push(CLASS_WORDS[class][corpus_rng.random_range(0..3usize)]);
                } else {
                    words.push(FILLERS[corpus_rng.random_range(0..4usize)]);
                }
            }
            out.push(LabeledExample {
                text: words.join(" "),
                label: class,
            });
        }
    }
    out
}

struct World {
    train: Vec<LabeledExample>,
    val: Vec<LabeledExample>,
    tokenizer: SubwordTokenizer,
}

fn world(train_per_class: usize, val_per_class: usize) -> World {
    let train = toy_corpus(train_per_class, 7);
    let val = toy_corpus(val_per_class, 21);
    let tokenizer = SubwordTokenizer::train(&train, 160).unwrap();
    World {
        train,
        val,
        tokenizer,
    }
}

/// An encoder whose pooled features separate the toy classes: train a
/// supervised classifier, then transplant its encoder weights into a fresh
/// projection model.
fn good_encoder(w: &World, seed: u64) -> ScatModel {
    let enc = tiny_encoder(w.tokenizer.vocab_size());
    let config = TrainConfig {
        regime: Regime::Supervised,
        epochs: 15,
        warmup_epochs: 0,
        batch_size: 16,
        learning_rate: 2e-3,
        seed,
        ..TrainConfig::default()
    };
    let sup = train_supervised(&w.train, &w.tokenizer, &enc, 4, &config).unwrap();
    let mut scat =
        ScatModel::new(&enc, &ProjectorConfig { output_dim: 6 }, seed).unwrap();
    let ids: Vec<_> = scat.store.ids().collect();
    for id in ids {
        let name = scat.store.name(id).to_string();
        if let Some(src) = sup.model.store.id_of(&name) {
            *scat.store.get_mut(id) = sup.model.store.get(src).clone();
        }
    }
    scat
}

/// Every encoder parameter of `source` present in `trained` is bit-equal.
fn encoder_params_unchanged(source: &ParamStore, trained: &ParamStore) -> bool {
    source.ids().all(|id| {
        let name = source.name(id);
        match trained.id_of(name) {
            Some(other) => source.get(id) == trained.get(other),
            None => true, // projector parameters are not part of a classifier
        }
    })
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[test]
fn presets_match_their_documented_defaults() {
    let linear = EvalConfig::linear();
    assert_eq!(linear.mode, EvalMode::Linear);
    assert_eq!(linear.epochs, 100);
    assert_eq!(linear.batch_size, 128);
    assert_eq!(linear.learning_rate, 5e-4);
    assert_eq!(linear.weight_decay, 5e-4);
    linear.validate().unwrap();
    assert_eq!(EvalConfig::default(), linear);

    let finetune = EvalConfig::finetune();
    assert_eq!(finetune.mode, EvalMode::Finetune);
    assert_eq!(finetune.epochs, 50);
    assert_eq!(finetune.learning_rate, 2e-5);
    finetune.validate().unwrap();

    for bad in [
        EvalConfig { epochs: 0, ..linear },
        EvalConfig {
            batch_size: 0,
            ..linear
        },
        EvalConfig {
            learning_rate: 0.0,
            ..linear
        },
        EvalConfig {
            weight_decay: -1.0,
            ..linear
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
}

// ---------------------------------------------------------------------------
// Linear evaluation
// ---------------------------------------------------------------------------

#[test]
fn linear_evaluation_never_touches_encoder_weights() {
    let w = world(4, 2);
    let enc = tiny_encoder(w.tokenizer.vocab_size());
    let encoder = ScatModel::new(&enc, &ProjectorConfig { output_dim: 6 }, 5).unwrap();
    let config = EvalConfig {
        epochs: 5,
        batch_size: 8,
        ..EvalConfig::linear()
    };
    let run = linear_evaluate(&encoder, &w.train, &w.val, &w.tokenizer, 4, &config).unwrap();

    assert!(encoder_params_unchanged(
        &encoder.store,
        &run.classifier.store
    ));
    assert_eq!(run.val_accuracy.len(), config.epochs);
    assert!(run.best_epoch < config.epochs);
    assert_eq!(run.best_val_accuracy, run.val_accuracy[run.best_epoch]);
    // Selection is argmax with ties broken toward the earliest epoch: every
    // earlier epoch must be strictly worse.
    for epoch in 0..run.best_epoch {
        assert!(run.val_accuracy[epoch] < run.best_val_accuracy);
    }
    assert!(!run.state.records.is_empty());
}

#[test]
fn linear_evaluation_on_a_good_encoder_is_accurate() {
    let w = world(20, 10);
    let encoder = good_encoder(&w, 11);
    let config = EvalConfig {
        epochs: 40,
        batch_size: 16,
        learning_rate: 5e-3,
        ..EvalConfig::linear()
    };
    let run = linear_evaluate(&encoder, &w.train, &w.val, &w.tokenizer, 4, &config).unwrap();
    assert!(
        run.best_val_accuracy > 90.0,
        "validation accuracy {} ≤ 90 with separable features",
        run.best_val_accuracy
    );
    // The selected head is the one evaluated: rebuilding the validation score
    // from the returned classifier reproduces the recorded best.
    let correct = w
        .val
        .iter()
        .filter(|ex| {
            let toks = tokenize_text(&ex.text, None, &w.tokenizer, MAX_LEN);
            let logits = run.classifier.logits(&toks.subwords).unwrap();
            argmax_row(logits.as_slice().unwrap()) == ex.label
        })
        .count();
    let rebuilt = 100.0 * correct as f64 / w.val.len() as f64;
    assert!((rebuilt - run.best_val_accuracy).abs() < 1e-12);
}

#[test]
fn evaluation_rejects_bad_inputs() {
    let w = world(2, 1);
    let enc = tiny_encoder(w.tokenizer.vocab_size());
    let encoder = ScatModel::new(&enc, &ProjectorConfig { output_dim: 6 }, 5).unwrap();
    let config = EvalConfig {
        epochs: 1,
        ..EvalConfig::linear()
    };

    assert!(matches!(
        linear_evaluate(&encoder, &w.train, &[], &w.tokenizer, 4, &config),
        Err(Error::Eval(_))
    ));
    assert!(matches!(
        linear_evaluate(&encoder, &[], &w.val, &w.tokenizer, 4, &config),
        Err(Error::Eval(_))
    ));
    assert!(matches!(
        linear_evaluate(&encoder, &w.train, &w.val, &w.tokenizer, 2, &config),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        linear_evaluate(
            &encoder,
            &w.train,
            &w.val,
            &w.tokenizer,
            4,
            &EvalConfig::finetune()
        ),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        finetune_evaluate(&encoder, &w.train, &w.val, &w.tokenizer, 4, &config),
        Err(Error::Config(_))
    ));
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

#[test]
fn finetuning_updates_encoder_weights_and_is_deterministic() {
    let w = world(3, 2);
    let enc = tiny_encoder(w.tokenizer.vocab_size());
    let encoder = ScatModel::new(&enc, &ProjectorConfig { output_dim: 6 }, 5).unwrap();
    let config = EvalConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        ..EvalConfig::finetune()
    };
    let run = finetune_evaluate(&encoder, &w.train, &w.val, &w.tokenizer, 4, &config).unwrap();
    assert!(
        !encoder_params_unchanged(&encoder.store, &run.classifier.store),
        "fine-tuning must modify encoder parameters"
    );
    assert_eq!(run.val_accuracy.len(), config.epochs);

    let again = finetune_evaluate(&encoder, &w.train, &w.val, &w.tokenizer, 4, &config).unwrap();
    assert_eq!(
        weight_hash(&run.classifier.store),
        weight_hash(&again.classifier.store)
    );
    assert_eq!(run.best_epoch, again.best_epoch);
}

#[test]
fn finetuning_matches_or_beats_linear_evaluation_on_clean_accuracy() {
    // Starting from an untrained encoder: the linear head can only re-weight
    // random features, while fine-tuning shapes the features themselves.
    let w = world(10, 8);
    let enc = tiny_encoder(w.tokenizer.vocab_size());
    let mut wins = 0;
    for seed in [2020u64, 2010, 2000] {
        let encoder = ScatModel::new(&enc, &ProjectorConfig { output_dim: 6 }, seed).unwrap();
        let linear = linear_evaluate(
            &encoder,
            &w.train,
            &w.val,
            &w.tokenizer,
            4,
            &EvalConfig {
                epochs: 30,
                batch_size: 16,
                learning_rate: 5e-3,
                seed,
                ..EvalConfig::linear()
            },
        )
        .unwrap();
        let tuned = finetune_evaluate(
            &encoder,
            &w.train,
            &w.val,
            &w.tokenizer,
            4,
            &EvalConfig {
                epochs: 15,
                batch_size: 16,
                learning_rate: 2e-3,
                seed,
                ..EvalConfig::finetune()
            },
        )
        .unwrap();
        if tuned.best_val_accuracy >= linear.best_val_accuracy {
            wins += 1;
        }
    }
    assert!(
        wins >= 2,
        "fine-tuning beat linear evaluation on only {wins}/3 seeds"
    );
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[test]
fn failure_rate_follows_the_ratio_identity() {
    let t = MetricTriple::from_accuracies(95.3, 16.6).unwrap();
    assert_eq!(round1(t.afr), 17.4);
    assert!(!t.afr_undefined);

    let t = MetricTriple::from_accuracies(92.3, 0.3).unwrap();
    assert_eq!(round1(t.afr), 0.3);

    let t = MetricTriple::from_accuracies(100.0, 100.0).unwrap();
    assert_eq!((t.acc, t.atk_acc, t.afr), (100.0, 100.0, 100.0));

    let t = MetricTriple::from_accuracies(0.0, 0.0).unwrap();
    assert_eq!(t.afr, 0.0);
    assert!(t.afr_undefined);

    assert!(MetricTriple::from_accuracies(50.0, 60.0).is_err());
    assert!(MetricTriple::from_accuracies(120.0, 10.0).is_err());
    assert!(MetricTriple::from_accuracies(80.0, -1.0).is_err());
}

#[test]
fn metrics_count_per_example_correctness() {
    let clean = [true, true, true, true, true, true, true, true, true, false];
    let post = [true, true, true, true, true, true, false, false, false, false];
    let t = compute_metrics(&clean, &post).unwrap();
    assert_eq!(t.acc, 90.0);
    assert_eq!(t.atk_acc, 60.0);
    assert!((t.afr - 100.0 * 60.0 / 90.0).abs() < 1e-12);

    let labels = [0usize, 1, 2, 3, 0];
    let clean_pred = [0usize, 1, 2, 3, 1]; // 4/5 correct
    let post_pred = [0usize, 1, 0, 0, 1]; // 2/5 correct
    let t = compute_metrics_from_predictions(&clean_pred, &labels, &post_pred).unwrap();
    assert_eq!(t.acc, 80.0);
    assert_eq!(t.atk_acc, 40.0);
    assert_eq!(round1(t.afr), 50.0);

    assert!(compute_metrics(&[], &[]).is_err());
    assert!(compute_metrics(&[true], &[true, false]).is_err());
    assert!(compute_metrics_from_predictions(&[0], &[0, 1], &[0]).is_err());

    let t = compute_metrics(&[false, false], &[false, false]).unwrap();
    assert!(t.afr_undefined);
    assert_eq!((t.acc, t.atk_acc, t.afr), (0.0, 0.0, 0.0));
}

#[test]
fn serialized_triples_omit_the_flag_unless_set() {
    let normal = MetricTriple::from_accuracies(90.0, 45.0).unwrap();
    let json = serde_json::to_string(&normal).unwrap();
    assert!(!json.contains("afr_undefined"));
    let undefined = MetricTriple::from_accuracies(0.0, 0.0).unwrap();
    let json = serde_json::to_string(&undefined).unwrap();
    assert!(json.contains("afr_undefined"));
    let back: MetricTriple = serde_json::from_str(&json).unwrap();
    assert_eq!(back, undefined);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn triple(acc: f64, atk_acc: f64) -> MetricTriple {
    MetricTriple::from_accuracies(acc, atk_acc).unwrap()
}

#[test]
fn aggregation_uses_population_standard_deviation() {
    // Hand oracle: mean 45.1333…; squared deviations 1.7777…, 0.1877…,
    // 3.1211…; population variance 1.69555… → SD 1.3021…. The sample
    // (n−1) convention would give 1.595, far outside tolerance.
    let runs = [triple(90.0, 43.8), triple(90.0, 44.7), triple(90.0, 46.9)];
    let report = aggregate_seeds(&runs).unwrap();
    assert!((report.atk_acc.mean - 45.1).abs() < 0.05);
    assert!((report.atk_acc.sd - 1.30).abs() < 0.05);

    let runs = [triple(91.7, 10.0), triple(92.8, 10.0), triple(92.1, 10.0)];
    let report = aggregate_seeds(&runs).unwrap();
    assert!((report.acc.mean - 92.2).abs() < 0.05);
    assert!((report.acc.sd - 0.46).abs() < 0.05);

    let single = aggregate_seeds(&[triple(80.0, 40.0)]).unwrap();
    assert_eq!(single.acc.sd, 0.0);
    assert_eq!(single.acc.mean, 80.0);
    assert_eq!(single.per_seed.len(), 1);

    assert!(aggregate_seeds(&[]).is_err());

    // The report is recomputable from its own per-seed list.
    let report = aggregate_seeds(&runs).unwrap();
    let re = aggregate_seeds(&report.per_seed).unwrap();
    assert_eq!(report, re);
}

#[test]
fn delta_summaries_average_pairwise_differences() {
    let afr_pairs = [(0.3, 28.1), (17.4, 49.0), (8.1, 19.3), (20.2, 49.0)];
    let delta = mean_delta(&afr_pairs).unwrap();
    assert!((delta - 24.9).abs() <= 0.05 + 1e-12, "delta {delta}");

    let atk_pairs = [(3.4, 44.0), (4.6, 45.7), (41.7, 58.7), (46.1, 74.3)];
    let delta = mean_delta(&atk_pairs).unwrap();
    assert!((delta - 31.7).abs() <= 0.05 + 1e-12, "delta {delta}");

    assert_eq!(mean_delta(&[(5.0, 5.0), (7.5, 7.5)]).unwrap(), 0.0);
    assert!(mean_delta(&[]).is_err());

    let pairs = [
        (triple(90.0, 10.0), triple(92.0, 40.0)),
        (triple(80.0, 20.0), triple(82.0, 30.0)),
    ];
    let summary = improvement_summary(&pairs).unwrap();
    assert_eq!(summary.acc_delta, 2.0);
    assert_eq!(summary.atk_acc_delta, 20.0);
    let expected_afr = ((40.0 / 92.0 - 10.0 / 90.0) + (30.0 / 82.0 - 20.0 / 80.0)) * 100.0 / 2.0;
    assert!((summary.afr_delta - expected_afr).abs() < 1e-9);
    assert!(improvement_summary(&[]).is_err());
}

#[test]
fn rounding_is_to_one_decimal() {
    assert_eq!(round1(17.418), 17.4);
    assert_eq!(round1(0.325), 0.3);
    assert_eq!(round1(45.15), 45.2);
    assert_eq!(round1(-1.26), -1.3);
}
