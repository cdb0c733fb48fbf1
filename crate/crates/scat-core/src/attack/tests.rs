use std::sync::LazyLock;

use ndarray::Array1;

use super::*;
use crate::data::tokenize_text;
use crate::error::Error;
use crate::model::{EncoderConfig, InitKind, ProjectorConfig, ScatModel};
use crate::rng;
use crate::tensor::Mat;
use crate::train::{train_supervised, Regime, TrainConfig};
use rand::Rng;

const MAX_LEN: usize = 24;
const FILLERS: [&str; 6] = ["the", "of", "and", "with", "day", "sun"];

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

/// Two classes separated by a single keyword: class 0 sentences contain
/// "beta", class 1 sentences contain "alpha", everything else is filler.
fn keyword_corpus(per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut r = rng::stream(seed, "attack-test-corpus", &[]);
    let mut corpus = Vec::new();
    for _ in 0..per_class {
        for (label, keyword) in [(0usize, "beta"), (1usize, "alpha")] {
            let slot = r.random_range(0..4);
            let words: Vec<String> = (0..4)
                .map(|j| {
                    if j == slot {
                        keyword.to_string()
                    } else {
                        FILLERS[r.random_range(0..FILLERS.len())].to_string()
                    }
                })
                .collect();
            corpus.push(LabeledExample {
                text: words.join(" "),
                label,
            });
        }
    }
    corpus
}

struct AttackWorld {
    attack_set: Vec<LabeledExample>,
    tokenizer: SubwordTokenizer,
    victim: TextClassifier,
    synonyms: SynonymResource,
    /// Untrained encoder used as the attacker-side similarity model; its
    /// pooled embeddings barely move under single-word substitutions, so the
    /// default 0.5 threshold passes them.
    similarity: ScatModel,
}

static WORLD: LazyLock<AttackWorld> = LazyLock::new(|| {
    let train = keyword_corpus(24, 7);
    let attack_set = keyword_corpus(6, 99);
    let tokenizer = SubwordTokenizer::train(&train, 160).unwrap();
    let encoder = tiny_encoder(tokenizer.vocab_size());
    let config = TrainConfig {
        regime: Regime::Supervised,
        epochs: 20,
        warmup_epochs: 0,
        batch_size: 8,
        learning_rate: 2e-3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = train_supervised(&train, &tokenizer, &encoder, 2, &config).unwrap();
    let mut synonyms = SynonymResource::new();
    synonyms.add_synonym("alpha", "beta", 0.9);
    synonyms.add_synonym("alpha", "almost", 0.3);
    synonyms.add_synonym("beta", "alpha", 0.9);
    let similarity = ScatModel::new(&encoder, &ProjectorConfig { output_dim: 6 }, 3).unwrap();
    AttackWorld {
        attack_set,
        tokenizer,
        victim: run.model.freeze(),
        synonyms,
        similarity,
    }
});

/// Echo scorer that additionally offers `offer` wherever `at_token` sits, so
/// exactly one position has a (single) substitution candidate.
struct TargetedMlm {
    vocab: usize,
    at_token: u32,
    offer: u32,
}

impl MlmScorer for TargetedMlm {
    fn subword_vocab_size(&self) -> usize {
        self.vocab
    }

    fn logits(&self, subwords: &[u32]) -> Result<Mat> {
        let mut m = Mat::zeros((subwords.len(), self.vocab));
        for (p, &t) in subwords.iter().enumerate() {
            m[[p, t as usize]] = 8.0;
            if t == self.at_token {
                m[[p, self.offer as usize]] = 7.0;
            }
        }
        Ok(m)
    }
}

/// Echo scorer that offers `offer` at every position.
struct BoostMlm {
    vocab: usize,
    offer: u32,
}

impl MlmScorer for BoostMlm {
    fn subword_vocab_size(&self) -> usize {
        self.vocab
    }

    fn logits(&self, subwords: &[u32]) -> Result<Mat> {
        let mut m = Mat::zeros((subwords.len(), self.vocab));
        for (p, &t) in subwords.iter().enumerate() {
            m[[p, t as usize]] = 8.0;
            if t != self.offer {
                m[[p, self.offer as usize]] = 7.0;
            }
        }
        Ok(m)
    }
}

fn single_subword_id(tokenizer: &SubwordTokenizer, word: &str) -> u32 {
    let t = tokenize_text(word, None, tokenizer, MAX_LEN);
    assert_eq!(t.words.len(), 1);
    let (start, end) = t.word_to_subword[0];
    assert_eq!(end - start, 1, "{word} splits into multiple sub-words");
    t.subwords[start]
}

fn predict_text(victim: &TextClassifier, tokenizer: &SubwordTokenizer, text: &str) -> usize {
    let t = tokenize_text(text, None, tokenizer, victim.encoder.config.max_len);
    victim.predict(&t.subwords).unwrap().0
}

fn synonym_config() -> AttackConfig {
    AttackConfig::default()
}

fn mlm_config() -> AttackConfig {
    AttackConfig {
        attacker: AttackerKind::MlmGreedy,
        max_candidates: 2,
        ..AttackConfig::default()
    }
}

fn flip_example() -> LabeledExample {
    LabeledExample {
        text: "alpha the of day".to_string(),
        label: 1,
    }
}

#[test]
fn default_config_and_validation() {
    let config = AttackConfig::default();
    assert_eq!(config.attacker, AttackerKind::SynonymGreedy);
    assert_eq!(config.synonym_sim_threshold, 0.5);
    assert_eq!(config.sentence_sim_threshold, 0.5);
    assert!(!config.antonym_filtering);
    assert_eq!(config.max_candidates, 48);
    assert_eq!(config.query_budget, 2000);
    assert!(config.validate().is_ok());

    for bad in [
        AttackConfig {
            synonym_sim_threshold: 1.5,
            ..config
        },
        AttackConfig {
            synonym_sim_threshold: -0.1,
            ..config
        },
        AttackConfig {
            synonym_sim_threshold: f64::NAN,
            ..config
        },
        AttackConfig {
            sentence_sim_threshold: 2.0,
            ..config
        },
        AttackConfig {
            max_candidates: 0,
            ..config
        },
        AttackConfig {
            query_budget: 0,
            ..config
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    assert_eq!(
        serde_json::to_string(&AttackerKind::SynonymGreedy).unwrap(),
        "\"synonym_greedy\""
    );
    assert_eq!(
        serde_json::to_string(&AttackerKind::MlmGreedy).unwrap(),
        "\"mlm_greedy\""
    );
    assert_eq!(
        serde_json::to_string(&AttackerKind::Labelfree).unwrap(),
        "\"labelfree\""
    );
    let round: AttackConfig =
        serde_json::from_str(&serde_json::to_string(&config).unwrap()).unwrap();
    assert_eq!(round, config);
}

#[test]
fn outcome_serialization_omits_the_budget_flag_unless_set() {
    let mut outcome = AttackOutcome {
        example_id: 3,
        success: true,
        perturbed_words: vec!["beta".to_string(), "day".to_string()],
        num_queries: 7,
        perturbation_rate: 0.5,
        budget_exhausted: false,
    };
    let json = serde_json::to_string(&outcome).unwrap();
    assert!(!json.contains("budget_exhausted"));
    let round: AttackOutcome = serde_json::from_str(&json).unwrap();
    assert_eq!(round, outcome);
    assert_eq!(outcome.perturbed_text(), "beta day");

    outcome.budget_exhausted = true;
    let json = serde_json::to_string(&outcome).unwrap();
    assert!(json.contains("\"budget_exhausted\":true"));
    let round: AttackOutcome = serde_json::from_str(&json).unwrap();
    assert_eq!(round, outcome);
}

#[test]
fn constant_victim_defeats_every_attacker() {
    let w = &*WORLD;
    let encoder = tiny_encoder(w.tokenizer.vocab_size());
    let scat = ScatModel::new(&encoder, &ProjectorConfig { output_dim: 6 }, 5).unwrap();
    let constant = TextClassifier::from_parts(
        scat.store.clone(),
        scat.encoder.clone(),
        Mat::zeros((encoder.hidden_dim, 2)),
        Mat::zeros((1, 2)),
    );
    let example = LabeledExample {
        text: "beta day of sun".to_string(),
        label: 0,
    };

    let outcome = attack_synonym_greedy(
        0,
        &example,
        &constant,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.perturbed_words, vec!["beta", "day", "of", "sun"]);
    assert_eq!(outcome.perturbation_rate, 0.0);

    let beta = single_subword_id(&w.tokenizer, "beta");
    let alpha = single_subword_id(&w.tokenizer, "alpha");
    let mlm = TargetedMlm {
        vocab: w.tokenizer.vocab_size(),
        at_token: beta,
        offer: alpha,
    };
    let outcome = attack_mlm_greedy(
        0,
        &example,
        &constant,
        &w.similarity,
        &w.tokenizer,
        &mlm,
        &w.synonyms,
        &mlm_config(),
    )
    .unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.perturbed_words, vec!["beta", "day", "of", "sun"]);

    let models = LabelfreeModels {
        scat: &scat,
        mlm: &mlm,
        synonyms: &w.synonyms,
        temperature: 0.5,
        negatives: &[],
    };
    let advgen = AdvGenConfig {
        attack_fraction: 0.5,
        candidates: 2,
        ..AdvGenConfig::default()
    };
    let config = AttackConfig {
        attacker: AttackerKind::Labelfree,
        ..AttackConfig::default()
    };
    let mut r = adv_stream(config.rng_seed, 0, 0);
    let outcome = attack_labelfree(
        0,
        &example,
        &constant,
        &models,
        &w.tokenizer,
        &advgen,
        &config,
        &mut r,
    )
    .unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.perturbed_words.len(), 4);

    // A constant victim predicting class 0 misclassifies label-1 sentences;
    // those are skipped with a single query.
    let skipped = attack_synonym_greedy(
        1,
        &flip_example(),
        &constant,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    assert!(!skipped.success);
    assert_eq!(skipped.num_queries, 1);
    assert_eq!(skipped.perturbed_words, vec!["alpha", "the", "of", "day"]);
}

#[test]
fn synonym_attack_flips_the_keyword_sentence() {
    let w = &*WORLD;
    let example = flip_example();
    assert_eq!(predict_text(&w.victim, &w.tokenizer, &example.text), 1);

    let outcome = attack_synonym_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    assert!(outcome.success);
    assert!(!outcome.budget_exhausted);
    assert_eq!(outcome.perturbed_words, vec!["beta", "the", "of", "day"]);
    assert!((outcome.perturbation_rate - 0.25).abs() < 1e-12);
    assert!(outcome.num_queries >= 2);
    assert_ne!(
        predict_text(&w.victim, &w.tokenizer, &outcome.perturbed_text()),
        1
    );
}

#[test]
fn synonym_threshold_excludes_low_scoring_candidates() {
    let w = &*WORLD;
    let config = AttackConfig {
        synonym_sim_threshold: 0.95,
        ..AttackConfig::default()
    };
    let outcome = attack_synonym_greedy(
        0,
        &flip_example(),
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &config,
    )
    .unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.perturbed_words, vec!["alpha", "the", "of", "day"]);
    // One clean query plus one deletion query per word; no candidates survive
    // the 0.95 score threshold, so no substitution is ever tried.
    assert_eq!(outcome.num_queries, 1 + 4);
}

#[test]
fn mlm_attack_flips_via_masking_importance_and_candidates() {
    let w = &*WORLD;
    let example = flip_example();
    let mlm = TargetedMlm {
        vocab: w.tokenizer.vocab_size(),
        at_token: single_subword_id(&w.tokenizer, "alpha"),
        offer: single_subword_id(&w.tokenizer, "beta"),
    };
    let outcome = attack_mlm_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &mlm,
        &w.synonyms,
        &mlm_config(),
    )
    .unwrap();
    assert!(outcome.success);
    assert_eq!(outcome.perturbed_words, vec!["beta", "the", "of", "day"]);
    // One clean query, one masking query per word, one candidate query at
    // the keyword position (the only position with a candidate).
    assert_eq!(outcome.num_queries, 1 + 4 + 1);
    assert_ne!(
        predict_text(&w.victim, &w.tokenizer, &outcome.perturbed_text()),
        1
    );
}

#[test]
fn antonym_filtering_blocks_the_only_flipping_candidate() {
    let w = &*WORLD;
    let example = flip_example();
    let mlm = TargetedMlm {
        vocab: w.tokenizer.vocab_size(),
        at_token: single_subword_id(&w.tokenizer, "alpha"),
        offer: single_subword_id(&w.tokenizer, "beta"),
    };
    let mut antonyms = SynonymResource::new();
    antonyms.add_antonym("alpha", "beta");

    let unfiltered = attack_mlm_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &mlm,
        &antonyms,
        &mlm_config(),
    )
    .unwrap();
    assert!(unfiltered.success);

    let config = AttackConfig {
        antonym_filtering: true,
        ..mlm_config()
    };
    let filtered = attack_mlm_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &mlm,
        &antonyms,
        &config,
    )
    .unwrap();
    assert!(!filtered.success);
    assert_eq!(filtered.perturbed_words, vec!["alpha", "the", "of", "day"]);
    assert_eq!(filtered.num_queries, 1 + 4);
}

#[test]
fn sentence_similarity_filter_can_block_every_substitution() {
    let w = &*WORLD;
    // A supervised victim's own pooled space separates the classes so
    // sharply that, used as the similarity model, it rejects exactly the
    // substitutions that would flip it.
    let outcome = attack_synonym_greedy(
        0,
        &flip_example(),
        &w.victim,
        &w.victim,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.perturbed_words, vec!["alpha", "the", "of", "day"]);
    assert_eq!(outcome.num_queries, 1 + 4);
}

#[test]
fn attacks_are_deterministic() {
    let w = &*WORLD;
    let example = flip_example();

    let a = attack_synonym_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    let b = attack_synonym_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    assert_eq!(a, b);

    let mlm = BoostMlm {
        vocab: w.tokenizer.vocab_size(),
        offer: single_subword_id(&w.tokenizer, "beta"),
    };
    let a = attack_mlm_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &mlm,
        &w.synonyms,
        &mlm_config(),
    )
    .unwrap();
    let b = attack_mlm_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &mlm,
        &w.synonyms,
        &mlm_config(),
    )
    .unwrap();
    assert_eq!(a, b);

    let models = LabelfreeModels {
        scat: &w.similarity,
        mlm: &mlm,
        synonyms: &w.synonyms,
        temperature: 0.5,
        negatives: &[],
    };
    let advgen = AdvGenConfig {
        attack_fraction: 0.5,
        candidates: 2,
        ..AdvGenConfig::default()
    };
    let config = AttackConfig {
        attacker: AttackerKind::Labelfree,
        ..AttackConfig::default()
    };
    let mut r1 = adv_stream(config.rng_seed, 0, 0);
    let mut r2 = adv_stream(config.rng_seed, 0, 0);
    let a = attack_labelfree(
        0, &example, &w.victim, &models, &w.tokenizer, &advgen, &config, &mut r1,
    )
    .unwrap();
    let b = attack_labelfree(
        0, &example, &w.victim, &models, &w.tokenizer, &advgen, &config, &mut r2,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn exhausted_budgets_are_flagged_and_budget_growth_never_hurts() {
    let w = &*WORLD;
    let example = flip_example();

    let tight = AttackConfig {
        query_budget: 2,
        ..synonym_config()
    };
    let outcome = attack_synonym_greedy(
        0,
        &example,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &tight,
    )
    .unwrap();
    assert!(!outcome.success);
    assert!(outcome.budget_exhausted);
    assert_eq!(outcome.num_queries, 2);
    assert_eq!(outcome.perturbed_words, vec!["alpha", "the", "of", "day"]);

    let mut successes_by_budget = Vec::new();
    for budget in [1usize, 2, 4, 8, 16, 32, 64, 128, 256] {
        let config = AttackConfig {
            query_budget: budget,
            ..synonym_config()
        };
        let successes = w
            .attack_set
            .iter()
            .enumerate()
            .filter(|(id, ex)| {
                attack_synonym_greedy(
                    *id,
                    ex,
                    &w.victim,
                    &w.similarity,
                    &w.tokenizer,
                    &w.synonyms,
                    &config,
                )
                .unwrap()
                .success
            })
            .count();
        successes_by_budget.push(successes);
    }
    assert!(
        successes_by_budget.windows(2).all(|w| w[0] <= w[1]),
        "successes should not drop as the budget grows: {successes_by_budget:?}"
    );
    assert!(*successes_by_budget.last().unwrap() > 0);
}

#[test]
fn labelfree_attack_reuses_the_generator_verbatim() {
    let w = &*WORLD;
    let example = flip_example();
    assert_eq!(predict_text(&w.victim, &w.tokenizer, &example.text), 1);

    let scat = &w.similarity;
    let mlm = BoostMlm {
        vocab: w.tokenizer.vocab_size(),
        offer: single_subword_id(&w.tokenizer, "beta"),
    };
    let negatives: Vec<(Array1<f64>, Array1<f64>)> = ["beta day of sun", "the sun and day"]
        .iter()
        .map(|text| {
            let tokens = tokenize_text(text, None, &w.tokenizer, MAX_LEN).subwords;
            let z = scat.project(&tokens).unwrap();
            (z.clone(), z)
        })
        .collect();
    let models = LabelfreeModels {
        scat,
        mlm: &mlm,
        synonyms: &w.synonyms,
        temperature: 0.5,
        negatives: &negatives,
    };
    let advgen = AdvGenConfig {
        attack_fraction: 0.5,
        candidates: 2,
        ..AdvGenConfig::default()
    };
    let config = AttackConfig {
        attacker: AttackerKind::Labelfree,
        ..AttackConfig::default()
    };

    let mut r = adv_stream(config.rng_seed, 5, 0);
    let outcome = attack_labelfree(
        5, &example, &w.victim, &models, &w.tokenizer, &advgen, &config, &mut r,
    )
    .unwrap();

    // The same inputs fed straight into the generator must yield the same
    // perturbation: the attacker adds no search of its own.
    let source = tokenize_text(&example.text, None, &w.tokenizer, MAX_LEN);
    let pair = AugmentedPair {
        view1: source.clone(),
        view2: source.clone(),
        source,
        replaced_positions_1: Vec::new(),
        replaced_positions_2: Vec::new(),
    };
    let ctx = AdvContext {
        model: scat,
        mlm: &mlm,
        tokenizer: &w.tokenizer,
        synonyms: &w.synonyms,
        temperature: 0.5,
        max_len: MAX_LEN,
        negatives: &negatives,
    };
    let mut r = adv_stream(config.rng_seed, 5, 0);
    let adv = generate_adv(&pair, &ctx, &advgen, &mut r).unwrap();
    assert_eq!(outcome.perturbed_words, adv.tokenized.words);

    assert_eq!(outcome.num_queries, 2);
    assert_eq!(outcome.perturbed_words.len(), 4);
    let flipped = predict_text(&w.victim, &w.tokenizer, &outcome.perturbed_text()) != 1;
    assert_eq!(outcome.success, flipped);
}

fn synonym_setup(w: &AttackWorld) -> AttackerSetup<'_> {
    AttackerSetup::SynonymGreedy {
        similarity: &w.similarity,
        synonyms: &w.synonyms,
    }
}

#[test]
fn campaign_covers_every_example_and_metrics_round_trip() {
    let w = &*WORLD;
    let result = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        None,
    )
    .unwrap();

    assert_eq!(result.outcomes.len(), w.attack_set.len());
    for (i, outcome) in result.outcomes.iter().enumerate() {
        assert_eq!(outcome.example_id, i);
        let original = tokenize_text(
            &w.attack_set[i].text,
            None,
            &w.tokenizer,
            w.victim.encoder.config.max_len,
        );
        assert_eq!(outcome.perturbed_words.len(), original.words.len());
        if outcome.success {
            let clean = predict_text(&w.victim, &w.tokenizer, &w.attack_set[i].text);
            let post = predict_text(&w.victim, &w.tokenizer, &outcome.perturbed_text());
            assert_ne!(clean, post);
        }
    }

    // The summary must be recomputable from the persisted outcomes alone.
    let recomputed =
        campaign_metrics(&w.attack_set, &w.victim, &w.tokenizer, &result.outcomes).unwrap();
    assert_eq!(result.metrics, recomputed);
    assert!(result.metrics.atk_acc <= result.metrics.acc);

    // Every success costs exactly one clean-correct example.
    let n = w.attack_set.len() as f64;
    let successes = result.outcomes.iter().filter(|o| o.success).count() as f64;
    assert!((result.metrics.acc - result.metrics.atk_acc - 100.0 * successes / n).abs() < 1e-9);
    if result.metrics.acc > 0.0 {
        assert!(
            (result.metrics.afr - 100.0 * result.metrics.atk_acc / result.metrics.acc).abs()
                < 1e-9
        );
    }
    // The keyword victim is easy prey for the keyword synonym table.
    assert!(successes > 0.0);
}

#[test]
fn campaign_runs_the_mlm_and_labelfree_attackers() {
    let w = &*WORLD;
    let mlm = BoostMlm {
        vocab: w.tokenizer.vocab_size(),
        offer: single_subword_id(&w.tokenizer, "beta"),
    };
    let setup = AttackerSetup::MlmGreedy {
        similarity: &w.similarity,
        mlm: &mlm,
        synonyms: &w.synonyms,
    };
    let result = run_campaign(
        &w.attack_set,
        &w.victim,
        &setup,
        &w.tokenizer,
        &mlm_config(),
        None,
    )
    .unwrap();
    assert_eq!(result.outcomes.len(), w.attack_set.len());
    assert!(result.metrics.atk_acc <= result.metrics.acc);

    let setup = AttackerSetup::Labelfree {
        scat: &w.similarity,
        mlm: &mlm,
        synonyms: &w.synonyms,
        temperature: 0.5,
        advgen: AdvGenConfig {
            attack_fraction: 0.5,
            candidates: 2,
            ..AdvGenConfig::default()
        },
    };
    let config = AttackConfig {
        attacker: AttackerKind::Labelfree,
        ..AttackConfig::default()
    };
    let result = run_campaign(
        &w.attack_set,
        &w.victim,
        &setup,
        &w.tokenizer,
        &config,
        None,
    )
    .unwrap();
    assert_eq!(result.outcomes.len(), w.attack_set.len());
    assert!(result.metrics.atk_acc <= result.metrics.acc);
    for outcome in &result.outcomes {
        // Two queries when attacked, one when the clean prediction was
        // already wrong, none for empty sentences.
        assert!(outcome.num_queries <= 2);
    }
}

#[test]
fn campaign_logs_resume_and_stay_idempotent() {
    let w = &*WORLD;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("outcomes.jsonl");

    let expected = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        None,
    )
    .unwrap();

    let first = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        Some(&path),
    )
    .unwrap();
    assert_eq!(first.outcomes, expected.outcomes);
    let logged = read_outcome_log(&path).unwrap();
    assert_eq!(logged, expected.outcomes);

    // Truncate the log to its first five records and plant a sentinel query
    // count: a resumed campaign must trust the log rather than re-attack.
    let mut kept = logged[..5].to_vec();
    kept[3].num_queries = 777_777;
    let mut contents = String::new();
    for outcome in &kept {
        contents.push_str(&serde_json::to_string(outcome).unwrap());
        contents.push('\n');
    }
    std::fs::write(&path, contents).unwrap();

    let resumed = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        Some(&path),
    )
    .unwrap();
    assert_eq!(resumed.outcomes.len(), w.attack_set.len());
    assert_eq!(resumed.outcomes[3].num_queries, 777_777);
    for (i, outcome) in resumed.outcomes.iter().enumerate() {
        if i == 3 {
            continue;
        }
        assert_eq!(*outcome, expected.outcomes[i]);
    }
    assert_eq!(read_outcome_log(&path).unwrap().len(), w.attack_set.len());

    // With a complete log the campaign only recomputes the summary.
    let again = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        Some(&path),
    )
    .unwrap();
    assert_eq!(again.outcomes, resumed.outcomes);
    assert_eq!(again.metrics, resumed.metrics);
}

#[test]
fn campaign_rejects_mismatched_setups_and_corrupt_logs() {
    let w = &*WORLD;

    let mlm = BoostMlm {
        vocab: w.tokenizer.vocab_size(),
        offer: single_subword_id(&w.tokenizer, "beta"),
    };
    let mismatched = AttackerSetup::MlmGreedy {
        similarity: &w.similarity,
        mlm: &mlm,
        synonyms: &w.synonyms,
    };
    let err = run_campaign(
        &w.attack_set,
        &w.victim,
        &mismatched,
        &w.tokenizer,
        &synonym_config(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Attack(_)));

    let err = run_campaign(
        &[],
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Attack(_)));

    let dir = tempfile::tempdir().unwrap();
    let outcome = AttackOutcome {
        example_id: 0,
        success: false,
        perturbed_words: vec!["alpha".to_string()],
        num_queries: 1,
        perturbation_rate: 0.0,
        budget_exhausted: false,
    };
    let line = serde_json::to_string(&outcome).unwrap();

    let dup = dir.path().join("dup.jsonl");
    std::fs::write(&dup, format!("{line}\n{line}\n")).unwrap();
    let err = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        Some(&dup),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Attack(_)));

    let stray = dir.path().join("stray.jsonl");
    let mut big = outcome.clone();
    big.example_id = 99;
    std::fs::write(&stray, format!("{}\n", serde_json::to_string(&big).unwrap())).unwrap();
    let err = run_campaign(
        &w.attack_set,
        &w.victim,
        &synonym_setup(w),
        &w.tokenizer,
        &synonym_config(),
        Some(&stray),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Attack(_)));

    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, "not json\n").unwrap();
    assert!(matches!(
        read_outcome_log(&garbled).unwrap_err(),
        Error::Attack(_)
    ));

    // Mismatched outcome counts cannot produce a summary.
    let err = campaign_metrics(&w.attack_set, &w.victim, &w.tokenizer, &[outcome]).unwrap_err();
    assert!(matches!(err, Error::Attack(_)));
}

#[test]
fn empty_sentences_and_bad_labels_are_handled() {
    let w = &*WORLD;
    let empty = LabeledExample {
        text: String::new(),
        label: 0,
    };
    let outcome = attack_synonym_greedy(
        0,
        &empty,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap();
    assert!(!outcome.success);
    assert!(outcome.perturbed_words.is_empty());
    assert_eq!(outcome.num_queries, 0);

    let bad_label = LabeledExample {
        text: "alpha the of day".to_string(),
        label: 7,
    };
    let err = attack_synonym_greedy(
        0,
        &bad_label,
        &w.victim,
        &w.similarity,
        &w.tokenizer,
        &w.synonyms,
        &synonym_config(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Attack(_)));
}

