//! Black-box word-substitution attacks against a frozen text classifier.
//!
//! Three attackers share one query discipline: the victim exposes label
//! probabilities per call, every probability lookup counts against a fixed
//! query budget, and a successful attack must actually flip the victim's
//! prediction.
//!
//! * [`attack_synonym_greedy`] ranks words by deletion importance and greedily
//!   substitutes curated synonyms (TextFooler-style).
//! * [`attack_mlm_greedy`] ranks words by masking importance and draws
//!   candidates from a masked language model (BERT-Attack-style), optionally
//!   filtering antonyms through the synonym resource.
//! * [`attack_labelfree`] perturbs the input with the label-free adversarial
//!   generator and simply checks whether the victim's prediction moved; no
//!   label information reaches the generator.
//!
//! The greedy attackers keep a perturbation only when the perturbed sentence
//! stays close to the original under an attacker-side [`SimilarityEncoder`]
//! (cosine over pooled sentence embeddings). The encoder is a parameter
//! rather than the victim itself because a well-trained victim's pooled space
//! separates the classes so sharply that its own cosine rejects precisely the
//! substitutions that flip it; comparing victims fairly requires one shared,
//! victim-independent similarity model (a contrastively trained encoder works
//! well).
//!
//! [`run_campaign`] drives an attacker over a whole test set with a resumable
//! JSONL outcome log and reports clean accuracy, post-attack accuracy, and
//! attack failure rate.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advgen::{adv_stream, candidates_for_words, generate_adv, AdvContext, AdvGenConfig};
use crate::augment::AugmentedPair;
use crate::data::{retokenize_words, special, tokenize_text, LabeledExample, SubwordTokenizer};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricTriple};
use crate::model::{MlmScorer, ScatModel, TextClassifier};
use crate::parallel;
use crate::synonyms::SynonymResource;
use crate::train::collect_results;

/// Labelfree campaigns project examples in fixed-size chunks; each example's
/// in-batch negatives are the other chunk members, mirroring training.
const LABELFREE_CHUNK: usize = 32;

/// Which attack algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerKind {
    /// Deletion importance + curated synonym substitutions.
    SynonymGreedy,
    /// Masking importance + masked-LM candidate substitutions.
    MlmGreedy,
    /// Label-free adversarial generation, no greedy search.
    Labelfree,
}

impl AttackerKind {
    pub const ALL: [AttackerKind; 3] = [
        AttackerKind::SynonymGreedy,
        AttackerKind::MlmGreedy,
        AttackerKind::Labelfree,
    ];
}

/// Attack-side knobs shared by all attackers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub attacker: AttackerKind,
    /// Minimum curated-synonym score for the synonym attacker.
    pub synonym_sim_threshold: f64,
    /// Minimum cosine similarity between the victim's pooled embeddings of
    /// the original and the perturbed sentence for a substitution to count.
    pub sentence_sim_threshold: f64,
    /// Drop masked-LM candidates that are antonyms of the original word.
    pub antonym_filtering: bool,
    /// Maximum masked-LM candidates considered per word.
    pub max_candidates: usize,
    /// Maximum number of victim probability queries per example.
    pub query_budget: usize,
    /// Seed for the label-free generator's random draws.
    pub rng_seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            attacker: AttackerKind::SynonymGreedy,
            synonym_sim_threshold: 0.5,
            sentence_sim_threshold: 0.5,
            antonym_filtering: false,
            max_candidates: 48,
            query_budget: 2000,
            rng_seed: 2020,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.synonym_sim_threshold)
            || !self.synonym_sim_threshold.is_finite()
        {
            return Err(Error::Config(format!(
                "synonym_sim_threshold must lie in [0, 1], got {}",
                self.synonym_sim_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.sentence_sim_threshold)
            || !self.sentence_sim_threshold.is_finite()
        {
            return Err(Error::Config(format!(
                "sentence_sim_threshold must lie in [0, 1], got {}",
                self.sentence_sim_threshold
            )));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config(
                "max_candidates must be at least 1".to_string(),
            ));
        }
        if self.query_budget == 0 {
            return Err(Error::Config("query_budget must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Result of attacking one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    /// Index of the example within the attacked test set.
    pub example_id: usize,
    /// True iff the victim's prediction on `perturbed_words` differs from its
    /// prediction on the original text.
    pub success: bool,
    /// The perturbed sentence, word for word (same length as the original).
    pub perturbed_words: Vec<String>,
    /// Victim probability queries spent on this example.
    pub num_queries: usize,
    /// Fraction of words that differ from the original.
    pub perturbation_rate: f64,
    /// True iff the query budget ran out before the search finished.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub budget_exhausted: bool,
}

impl AttackOutcome {
    /// The perturbed sentence reassembled with single spaces.
    pub fn perturbed_text(&self) -> String {
        self.perturbed_words.join(" ")
    }
}

/// Attacker-side sentence encoder backing the sentence-similarity filter.
///
/// Implementations must accept any sub-word sequence the experiment's shared
/// tokenizer produces within the victim's length budget.
pub trait SimilarityEncoder: Sync {
    /// A pooled embedding of the sentence; candidates are filtered by cosine
    /// similarity between these embeddings.
    fn sentence_embedding(&self, subwords: &[u32]) -> Result<Array1<f64>>;
}

impl SimilarityEncoder for TextClassifier {
    fn sentence_embedding(&self, subwords: &[u32]) -> Result<Array1<f64>> {
        self.pooled(subwords)
    }
}

impl SimilarityEncoder for ScatModel {
    fn sentence_embedding(&self, subwords: &[u32]) -> Result<Array1<f64>> {
        self.pooled(subwords)
    }
}

/// Counted access to the victim's label probabilities.
///
/// Only probability lookups consume budget. Sentence-embedding lookups used
/// for the attacker-side similarity filter are free: they model the
/// attacker's own sentence encoder, not a victim query.
struct VictimSession<'a> {
    victim: &'a TextClassifier,
    budget: usize,
    queries: usize,
}

impl<'a> VictimSession<'a> {
    fn new(victim: &'a TextClassifier, budget: usize) -> Self {
        VictimSession {
            victim,
            budget,
            queries: 0,
        }
    }

    /// Label probabilities, or `None` once the budget is spent.
    fn probs(&mut self, subwords: &[u32]) -> Result<Option<Vec<f64>>> {
        if self.queries >= self.budget {
            return Ok(None);
        }
        self.queries += 1;
        self.victim.class_probs(subwords).map(Some)
    }
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn perturbation_rate(original: &[String], perturbed: &[String]) -> f64 {
    if original.is_empty() {
        return 0.0;
    }
    let changed = original
        .iter()
        .zip(perturbed)
        .filter(|(a, b)| a != b)
        .count();
    changed as f64 / original.len() as f64
}

fn unperturbed_outcome(example_id: usize, words: Vec<String>, num_queries: usize) -> AttackOutcome {
    AttackOutcome {
        example_id,
        success: false,
        perturbed_words: words,
        num_queries,
        perturbation_rate: 0.0,
        budget_exhausted: false,
    }
}

/// How the greedy attackers measure word importance.
enum ImportanceMode {
    /// Probability drop when the word is deleted.
    Deletion,
    /// Probability drop when the word's sub-words are replaced by `[MASK]`.
    Masking,
}

/// Shared greedy search: rank words by importance, then walk them in
/// descending order substituting the first candidate that flips the victim,
/// otherwise the one that most reduces the true-class probability.
fn greedy_attack(
    example_id: usize,
    example: &LabeledExample,
    victim: &TextClassifier,
    similarity: &dyn SimilarityEncoder,
    tokenizer: &SubwordTokenizer,
    config: &AttackConfig,
    mode: ImportanceMode,
    candidates_per_position: &dyn Fn(&[String]) -> Result<Vec<Vec<String>>>,
) -> Result<AttackOutcome> {
    config.validate()?;
    let max_len = victim.encoder.config.max_len;
    let original = tokenize_text(&example.text, Some(example.label), tokenizer, max_len);
    let n = original.words.len();
    if n == 0 {
        return Ok(unperturbed_outcome(example_id, Vec::new(), 0));
    }
    if example.label >= victim.num_classes() {
        return Err(Error::Attack(format!(
            "label {} out of range for {}-class victim",
            example.label,
            victim.num_classes()
        )));
    }

    let mut session = VictimSession::new(victim, config.query_budget);
    let Some(clean_probs) = session.probs(&original.subwords)? else {
        let mut out = unperturbed_outcome(example_id, original.words.clone(), session.queries);
        out.budget_exhausted = true;
        return Ok(out);
    };
    if argmax(&clean_probs) != example.label {
        // Already misclassified: nothing to attack.
        return Ok(unperturbed_outcome(
            example_id,
            original.words.clone(),
            session.queries,
        ));
    }

    // Word importance: true-class probability drop under deletion / masking.
    let mut importance = Vec::with_capacity(n);
    for i in 0..n {
        let probs = match mode {
            ImportanceMode::Deletion => {
                let mut reduced = original.words.clone();
                reduced.remove(i);
                let text = reduced.join(" ");
                let tokenized = tokenize_text(&text, None, tokenizer, max_len);
                session.probs(&tokenized.subwords)?
            }
            ImportanceMode::Masking => {
                let (start, end) = original.word_to_subword[i];
                let mut masked = original.subwords.clone();
                for s in masked[start..end].iter_mut() {
                    *s = special::MASK;
                }
                session.probs(&masked)?
            }
        };
        let Some(probs) = probs else {
            let mut out = unperturbed_outcome(example_id, original.words.clone(), session.queries);
            out.budget_exhausted = true;
            return Ok(out);
        };
        importance.push(clean_probs[example.label] - probs[example.label]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let candidate_lists = candidates_per_position(&original.words)?;
    if candidate_lists.len() != n {
        return Err(Error::Attack(format!(
            "candidate provider returned {} lists for {} words",
            candidate_lists.len(),
            n
        )));
    }

    let original_embedding = similarity.sentence_embedding(&original.subwords)?;
    let mut working = original.words.clone();
    let mut current_p = clean_probs[example.label];

    for &pos in &order {
        let mut best: Option<(Vec<String>, f64)> = None;
        for candidate in &candidate_lists[pos] {
            if *candidate == original.words[pos] {
                continue;
            }
            let mut trial = working.clone();
            trial[pos] = candidate.clone();
            let (tokenized, _) = retokenize_words(&original, &trial, tokenizer, max_len);
            if tokenized.words != trial {
                // The substitution pushed the sentence past the sub-word
                // budget and was reverted; the candidate cannot be applied.
                continue;
            }
            let trial_embedding = similarity.sentence_embedding(&tokenized.subwords)?;
            if cosine(&original_embedding, &trial_embedding) < config.sentence_sim_threshold {
                continue;
            }
            let Some(probs) = session.probs(&tokenized.subwords)? else {
                return Ok(AttackOutcome {
                    example_id,
                    success: false,
                    perturbation_rate: perturbation_rate(&original.words, &working),
                    perturbed_words: working,
                    num_queries: session.queries,
                    budget_exhausted: true,
                });
            };
            if argmax(&probs) != example.label {
                return Ok(AttackOutcome {
                    example_id,
                    success: true,
                    perturbation_rate: perturbation_rate(&original.words, &trial),
                    perturbed_words: trial,
                    num_queries: session.queries,
                    budget_exhausted: false,
                });
            }
            let p = probs[example.label];
            if best.as_ref().is_none_or(|(_, bp)| p < *bp) {
                best = Some((trial, p));
            }
        }
        if let Some((trial, p)) = best {
            if p < current_p {
                working = trial;
                current_p = p;
            }
        }
    }

    Ok(AttackOutcome {
        example_id,
        success: false,
        perturbation_rate: perturbation_rate(&original.words, &working),
        perturbed_words: working,
        num_queries: session.queries,
        budget_exhausted: false,
    })
}

/// Greedy attack drawing substitutions from a curated synonym table.
///
/// Word importance is the true-class probability drop when the word is
/// deleted. Synonyms below `synonym_sim_threshold` are skipped, and a
/// substitution only counts when the perturbed sentence stays within
/// `sentence_sim_threshold` cosine similarity of the original under the
/// attacker-side similarity encoder.
pub fn attack_synonym_greedy(
    example_id: usize,
    example: &LabeledExample,
    victim: &TextClassifier,
    similarity: &dyn SimilarityEncoder,
    tokenizer: &SubwordTokenizer,
    synonyms: &SynonymResource,
    config: &AttackConfig,
) -> Result<AttackOutcome> {
    let provider = |words: &[String]| -> Result<Vec<Vec<String>>> {
        Ok(words
            .iter()
            .map(|w| {
                synonyms
                    .synonyms_of(w)
                    .iter()
                    .filter(|entry| entry.score >= config.synonym_sim_threshold)
                    .take(config.max_candidates)
                    .map(|entry| entry.word.clone())
                    .collect()
            })
            .collect())
    };
    greedy_attack(
        example_id,
        example,
        victim,
        similarity,
        tokenizer,
        config,
        ImportanceMode::Deletion,
        &provider,
    )
}

/// Greedy attack drawing substitutions from a masked language model.
///
/// Word importance is the true-class probability drop when the word's
/// sub-words are masked. Candidates come from the shared masked-LM candidate
/// pipeline; with `antonym_filtering` enabled the synonym resource's antonym
/// table prunes them, otherwise antonyms survive.
pub fn attack_mlm_greedy(
    example_id: usize,
    example: &LabeledExample,
    victim: &TextClassifier,
    similarity: &dyn SimilarityEncoder,
    tokenizer: &SubwordTokenizer,
    mlm: &dyn MlmScorer,
    synonyms: &SynonymResource,
    config: &AttackConfig,
) -> Result<AttackOutcome> {
    config.validate()?;
    let empty = SynonymResource::new();
    let filter: &SynonymResource = if config.antonym_filtering {
        synonyms
    } else {
        &empty
    };
    let advgen = AdvGenConfig {
        candidates: config.max_candidates,
        rng_seed: config.rng_seed,
        ..AdvGenConfig::default()
    };
    let max_len = victim.encoder.config.max_len;
    let provider = |words: &[String]| -> Result<Vec<Vec<String>>> {
        let text = words.join(" ");
        let view = tokenize_text(&text, None, tokenizer, max_len);
        let positions: Vec<usize> = (0..view.words.len()).collect();
        candidates_for_words(&view, &positions, tokenizer, mlm, filter, &advgen)
    };
    greedy_attack(
        example_id,
        example,
        victim,
        similarity,
        tokenizer,
        config,
        ImportanceMode::Masking,
        &provider,
    )
}

/// Models the label-free attacker runs on its own side.
pub struct LabelfreeModels<'a> {
    /// Contrastively trained encoder whose loss gradients rank words.
    pub scat: &'a ScatModel,
    pub mlm: &'a dyn MlmScorer,
    pub synonyms: &'a SynonymResource,
    /// Contrastive temperature used when scoring candidate sentences.
    pub temperature: f64,
    /// In-batch negatives `(z_other, z_other)` from other test sentences.
    pub negatives: &'a [(Array1<f64>, Array1<f64>)],
}

/// Label-free attack: perturb with the adversarial generator, then check
/// whether the victim's prediction moved.
///
/// The generator sees both views as the unaugmented sentence and never sees
/// the label; it spends exactly two victim queries (original + perturbed).
pub fn attack_labelfree(
    example_id: usize,
    example: &LabeledExample,
    victim: &TextClassifier,
    models: &LabelfreeModels<'_>,
    tokenizer: &SubwordTokenizer,
    advgen: &AdvGenConfig,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackOutcome> {
    config.validate()?;
    advgen.validate()?;
    let gen_max_len = models.scat.encoder.config.max_len;
    let source = tokenize_text(&example.text, None, tokenizer, gen_max_len);
    if source.words.is_empty() {
        return Ok(unperturbed_outcome(example_id, Vec::new(), 0));
    }

    let victim_max_len = victim.encoder.config.max_len;
    let original = tokenize_text(&example.text, Some(example.label), tokenizer, victim_max_len);
    let mut session = VictimSession::new(victim, config.query_budget);
    let Some(clean_probs) = session.probs(&original.subwords)? else {
        let mut out = unperturbed_outcome(example_id, original.words.clone(), session.queries);
        out.budget_exhausted = true;
        return Ok(out);
    };
    let clean_pred = argmax(&clean_probs);
    if clean_pred != example.label {
        // Already misclassified: the campaign metric cannot improve here.
        return Ok(unperturbed_outcome(
            example_id,
            original.words.clone(),
            session.queries,
        ));
    }

    let pair = AugmentedPair {
        view1: source.clone(),
        view2: source.clone(),
        source,
        replaced_positions_1: Vec::new(),
        replaced_positions_2: Vec::new(),
    };
    let ctx = AdvContext {
        model: models.scat,
        mlm: models.mlm,
        tokenizer,
        synonyms: models.synonyms,
        temperature: models.temperature,
        max_len: gen_max_len,
        negatives: models.negatives,
    };
    let adv = generate_adv(&pair, &ctx, advgen, rng)?;
    let perturbed_text = adv.tokenized.text();
    let perturbed = tokenize_text(&perturbed_text, None, tokenizer, victim_max_len);

    let Some(probs) = session.probs(&perturbed.subwords)? else {
        let mut out = unperturbed_outcome(example_id, original.words.clone(), session.queries);
        out.budget_exhausted = true;
        return Ok(out);
    };
    let success = argmax(&probs) != clean_pred;
    Ok(AttackOutcome {
        example_id,
        success,
        perturbation_rate: perturbation_rate(&pair.view1.words, &adv.tokenized.words),
        perturbed_words: adv.tokenized.words,
        num_queries: session.queries,
        budget_exhausted: false,
    })
}

/// Attacker-specific resources for a campaign; must match
/// [`AttackConfig::attacker`].
pub enum AttackerSetup<'a> {
    SynonymGreedy {
        similarity: &'a dyn SimilarityEncoder,
        synonyms: &'a SynonymResource,
    },
    MlmGreedy {
        similarity: &'a dyn SimilarityEncoder,
        mlm: &'a dyn MlmScorer,
        synonyms: &'a SynonymResource,
    },
    Labelfree {
        scat: &'a ScatModel,
        mlm: &'a dyn MlmScorer,
        synonyms: &'a SynonymResource,
        temperature: f64,
        advgen: AdvGenConfig,
    },
}

impl AttackerSetup<'_> {
    pub fn kind(&self) -> AttackerKind {
        match self {
            AttackerSetup::SynonymGreedy { .. } => AttackerKind::SynonymGreedy,
            AttackerSetup::MlmGreedy { .. } => AttackerKind::MlmGreedy,
            AttackerSetup::Labelfree { .. } => AttackerKind::Labelfree,
        }
    }
}

/// A finished campaign: one outcome per test example plus summary metrics.
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub outcomes: Vec<AttackOutcome>,
    pub metrics: MetricTriple,
}

/// Parse a JSONL outcome log written by [`run_campaign`].
pub fn read_outcome_log(path: &Path) -> Result<Vec<AttackOutcome>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut outcomes = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: AttackOutcome = serde_json::from_str(&line).map_err(|e| {
            Error::Attack(format!(
                "{} line {}: malformed outcome record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

fn append_outcomes(path: &Path, outcomes: &[AttackOutcome]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for outcome in outcomes {
        let line = serde_json::to_string(outcome)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn attack_one(
    id: usize,
    example: &LabeledExample,
    victim: &TextClassifier,
    setup: &AttackerSetup<'_>,
    tokenizer: &SubwordTokenizer,
    config: &AttackConfig,
    labelfree_negatives: Option<&[(Array1<f64>, Array1<f64>)]>,
) -> Result<AttackOutcome> {
    match setup {
        AttackerSetup::SynonymGreedy {
            similarity,
            synonyms,
        } => attack_synonym_greedy(id, example, victim, *similarity, tokenizer, synonyms, config),
        AttackerSetup::MlmGreedy {
            similarity,
            mlm,
            synonyms,
        } => attack_mlm_greedy(
            id,
            example,
            victim,
            *similarity,
            tokenizer,
            *mlm,
            synonyms,
            config,
        ),
        AttackerSetup::Labelfree {
            scat,
            mlm,
            synonyms,
            temperature,
            advgen,
        } => {
            let models = LabelfreeModels {
                scat,
                mlm: *mlm,
                synonyms,
                temperature: *temperature,
                negatives: labelfree_negatives.unwrap_or(&[]),
            };
            let mut rng = adv_stream(config.rng_seed, id as u64, 0);
            attack_labelfree(
                id, example, victim, &models, tokenizer, advgen, config, &mut rng,
            )
        }
    }
}

/// Attack every example of `test_set` and summarise the damage.
///
/// With `log_path` set, finished outcomes are appended to a JSONL log as they
/// complete and already-logged examples are not re-attacked, so an
/// interrupted campaign resumes where it stopped. Examples are attacked
/// independently (in parallel for the greedy attackers; in fixed chunks of
/// [`LABELFREE_CHUNK`] whose members serve as each other's negatives for the
/// label-free attacker) and the log is written by a single writer.
pub fn run_campaign(
    test_set: &[LabeledExample],
    victim: &TextClassifier,
    setup: &AttackerSetup<'_>,
    tokenizer: &SubwordTokenizer,
    config: &AttackConfig,
    log_path: Option<&Path>,
) -> Result<CampaignResult> {
    config.validate()?;
    if setup.kind() != config.attacker {
        return Err(Error::Attack(format!(
            "attacker setup is {:?} but config selects {:?}",
            setup.kind(),
            config.attacker
        )));
    }
    if test_set.is_empty() {
        return Err(Error::Attack("empty test set".to_string()));
    }

    let mut done: BTreeMap<usize, AttackOutcome> = BTreeMap::new();
    if let Some(path) = log_path {
        if path.exists() {
            for outcome in read_outcome_log(path)? {
                if outcome.example_id >= test_set.len() {
                    return Err(Error::Attack(format!(
                        "outcome log {} references example {} beyond test set of {}",
                        path.display(),
                        outcome.example_id,
                        test_set.len()
                    )));
                }
                if done.insert(outcome.example_id, outcome).is_some() {
                    return Err(Error::Attack(format!(
                        "outcome log {} contains duplicate example ids",
                        path.display()
                    )));
                }
            }
        }
    }

    let missing: Vec<usize> = (0..test_set.len())
        .filter(|id| !done.contains_key(id))
        .collect();

    let fresh: Vec<AttackOutcome> = match setup {
        AttackerSetup::Labelfree { scat, .. } => {
            let gen_max_len = scat.encoder.config.max_len;
            let mut outcomes = Vec::with_capacity(missing.len());
            for chunk in missing.chunks(LABELFREE_CHUNK) {
                let projections = collect_results(parallel::map_slice(chunk, |&id| {
                    let tokens =
                        tokenize_text(&test_set[id].text, None, tokenizer, gen_max_len).subwords;
                    scat.project(&tokens)
                }))?;
                let per_example = collect_results(parallel::map_slice(
                    &chunk.iter().copied().enumerate().collect::<Vec<_>>(),
                    |&(slot, id)| {
                        let negatives: Vec<(Array1<f64>, Array1<f64>)> = projections
                            .iter()
                            .enumerate()
                            .filter(|(other, _)| *other != slot)
                            .map(|(_, z)| (z.clone(), z.clone()))
                            .collect();
                        attack_one(
                            id,
                            &test_set[id],
                            victim,
                            setup,
                            tokenizer,
                            config,
                            Some(&negatives),
                        )
                    },
                ))?;
                outcomes.extend(per_example);
            }
            outcomes
        }
        _ => collect_results(parallel::map_slice(&missing, |&id| {
            attack_one(id, &test_set[id], victim, setup, tokenizer, config, None)
        }))?,
    };

    if let Some(path) = log_path {
        append_outcomes(path, &fresh)?;
    }
    for outcome in fresh {
        done.insert(outcome.example_id, outcome);
    }
    let outcomes: Vec<AttackOutcome> = done.into_values().collect();

    let metrics = campaign_metrics(test_set, victim, tokenizer, &outcomes)?;
    Ok(CampaignResult { outcomes, metrics })
}

/// Recompute clean / post-attack accuracy and the failure rate for a set of
/// outcomes, querying the victim once per sentence version.
pub fn campaign_metrics(
    test_set: &[LabeledExample],
    victim: &TextClassifier,
    tokenizer: &SubwordTokenizer,
    outcomes: &[AttackOutcome],
) -> Result<MetricTriple> {
    if outcomes.len() != test_set.len() {
        return Err(Error::Attack(format!(
            "{} outcomes for {} test examples",
            outcomes.len(),
            test_set.len()
        )));
    }
    let max_len = victim.encoder.config.max_len;
    let correct = |text: &str, label: usize| -> Result<bool> {
        let tokens = tokenize_text(text, None, tokenizer, max_len).subwords;
        let (pred, _) = victim.predict(&tokens)?;
        Ok(pred == label)
    };
    let ids: Vec<usize> = (0..test_set.len()).collect();
    let clean = collect_results(parallel::map_slice(&ids, |&i| {
        correct(&test_set[i].text, test_set[i].label)
    }))?;
    let post = collect_results(parallel::map_slice(&ids, |&i| {
        let outcome = &outcomes[i];
        if outcome.example_id != i {
            return Err(Error::Attack(format!(
                "outcome {} out of order at slot {i}",
                outcome.example_id
            )));
        }
        correct(&outcome.perturbed_text(), test_set[i].label)
    }))?;
    compute_metrics(&clean, &post)
}

#[cfg(test)]
mod tests;
