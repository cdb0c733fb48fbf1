//! Label-free adversarial example generation.
//!
//! Starting from one augmented view of an example, words are ranked by the
//! 1-norm of the contrastive-loss gradient at their sub-word embeddings, the
//! top `attack_fraction` of them are selected, and each is replaced by one
//! uniformly random masked-LM substitution candidate that survives the
//! semantic filters (no original word, no antonyms, no pure punctuation).
//! No greedy loss-maximizing search takes place: candidate choice is random
//! by design, which keeps generation cheap enough to run inside every
//! pre-training step.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedPair;
use crate::data::{retokenize_words, SubwordTokenizer, TokenizedExample};
use crate::error::{Error, Result};
use crate::model::{
    mlm_top_k, span_pseudo_perplexity, MlmQuery, MlmQueryMode, MlmScorer, ScatModel,
};
use crate::objective::{self, ContrastiveBatch, Role};
use crate::rng;
use crate::synonyms::SynonymResource;
use crate::tensor::{Graph, Mat, NodeId};

/// Generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvGenConfig {
    /// Fraction ε of words to attack, in (0, 1].
    pub attack_fraction: f64,
    /// Number K of masked-LM candidates kept per attacked word.
    pub candidates: usize,
    /// Cap on enumerated sub-word combinations for words that split into
    /// multiple sub-words.
    pub max_subword_combinations: usize,
    pub rng_seed: u64,
}

impl Default for AdvGenConfig {
    fn default() -> Self {
        AdvGenConfig {
            attack_fraction: 0.30,
            candidates: 48,
            max_subword_combinations: 512,
            rng_seed: 2020,
        }
    }
}

impl AdvGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.attack_fraction > 0.0 && self.attack_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "attack_fraction must lie in (0, 1], got {}",
                self.attack_fraction
            )));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be ≥ 1".into()));
        }
        if self.max_subword_combinations == 0 {
            return Err(Error::Config("max_subword_combinations must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-word importance scores plus the descending-score position order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    /// One score per word position: the 1-norm of the loss gradient summed
    /// over the word's sub-word embeddings.
    pub scores: Vec<f64>,
    /// Word positions sorted by descending score, ties to the smaller index.
    pub order: Vec<usize>,
}

/// One performed substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacedWord {
    pub original: String,
    pub substitute: String,
}

/// A generated adversarial example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvExample {
    /// The adversarial text in both word and sub-word views.
    pub tokenized: TokenizedExample,
    /// Substituted positions and what happened there.
    pub replaced: BTreeMap<usize, ReplacedWord>,
    /// Contrastive loss of (adv, view2) in the generation context.
    pub closs_adv: f64,
}

impl AdvExample {
    pub fn tokens(&self) -> &[String] {
        &self.tokenized.words
    }
}

/// Everything generation needs besides the pair itself. `negatives` carries
/// the other in-batch examples' projection pairs; leave it empty for
/// standalone generation (the two views alone form the context).
pub struct AdvContext<'a> {
    pub model: &'a ScatModel,
    pub mlm: &'a dyn MlmScorer,
    pub tokenizer: &'a SubwordTokenizer,
    pub synonyms: &'a SynonymResource,
    pub temperature: f64,
    pub max_len: usize,
    pub negatives: &'a [(Array1<f64>, Array1<f64>)],
}

/// Per-example RNG stream for generation, decoupled from augmentation draws.
pub fn adv_stream(seed: u64, example_index: u64, epoch: u64) -> ChaCha8Rng {
    rng::stream(seed, "advgen", &[example_index, epoch])
}

// ---------------------------------------------------------------------------
// Importance
// ---------------------------------------------------------------------------

/// Symmetric contrastive pair loss of rows 0 and 1 of `z`, with every row of
/// `z` in the denominators (rows ≥ 2 act as negatives-only context).
fn context_pair_loss_graph(g: &mut Graph, z: NodeId, temperature: f64) -> NodeId {
    let zn = g.l2_normalize_rows(z);
    let sims = g.matmul_trans_b(zn, zn);
    let sims = g.scale(sims, 1.0 / temperature);
    let lse = g.log_sum_exp_rows_skip_diag(sims);
    let lse_pair = g.gather_entries(lse, vec![(0, 0), (1, 0)]);
    let sim_pair = g.gather_entries(sims, vec![(0, 1), (1, 0)]);
    let diff = g.sub(lse_pair, sim_pair);
    g.sum_all(diff)
}

/// Rank view1's words by how strongly the two-view contrastive loss reacts to
/// their embeddings: score = Σ over the word's sub-words of ‖∂L/∂e‖₁.
///
/// The loss treats (view1, view2) as the positive pair; `negatives` (other
/// in-batch projections, both views) extend the denominators when available.
pub fn importance_scores(
    model: &ScatModel,
    view1: &TokenizedExample,
    view2: &TokenizedExample,
    temperature: f64,
    negatives: &[(Array1<f64>, Array1<f64>)],
) -> Result<ImportanceRanking> {
    let z2 = model.project(&view2.subwords)?;
    let dim = z2.len();
    for (a, b) in negatives {
        if a.len() != dim || b.len() != dim {
            return Err(Error::AdvGen(
                "negative projection dimension mismatch".into(),
            ));
        }
    }

    let mut g = Graph::new(&model.store);
    let (nodes, z1) = model.project_graph(&mut g, &view1.subwords)?;
    let mut const_rows = Mat::zeros((1 + 2 * negatives.len(), dim));
    const_rows.row_mut(0).assign(&z2);
    for (j, (a, b)) in negatives.iter().enumerate() {
        const_rows.row_mut(1 + 2 * j).assign(a);
        const_rows.row_mut(2 + 2 * j).assign(b);
    }
    let consts = g.input(const_rows);
    let z = g.concat_rows(vec![z1, consts]);
    let loss = context_pair_loss_graph(&mut g, z, temperature);
    if !g.value(loss)[[0, 0]].is_finite() {
        return Err(Error::AdvGen("non-finite contrastive loss".into()));
    }

    let grads = g.backward_seeded(loss, Mat::from_elem((1, 1), 1.0), false);
    let grad = grads.node(nodes.tok_emb);
    let mut scores = Vec::with_capacity(view1.words.len());
    for &(start, end) in &view1.word_to_subword {
        let score = match grad {
            Some(m) => {
                let mut s = 0.0;
                for p in start..end {
                    s += m.row(p).iter().map(|v| v.abs()).sum::<f64>();
                }
                s
            }
            None => 0.0,
        };
        if !score.is_finite() {
            return Err(Error::AdvGen("non-finite importance gradient".into()));
        }
        scores.push(score);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(ImportanceRanking { scores, order })
}

/// The attacked positions: the top `max(1, floor(ε·n))` of the ranking, in
/// descending score order (ties already resolved toward smaller indices).
pub fn select_attack_set(ranking: &ImportanceRanking, attack_fraction: f64, n: usize) -> Vec<usize> {
    assert_eq!(ranking.scores.len(), n, "ranking does not cover all words");
    assert!(n >= 1, "cannot attack an empty example");
    let size = attack_budget(attack_fraction, n);
    ranking.order[..size.min(n)].to_vec()
}

/// Number of words attacked in an `n`-word example.
pub fn attack_budget(attack_fraction: f64, n: usize) -> usize {
    ((attack_fraction * n as f64).floor() as usize).max(1)
}

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

/// Masked-LM substitution candidates for one word of `view`, best first.
///
/// Intact words (one sub-word) take the top-K vocabulary items at their
/// position from a single unmasked forward of the original sequence. Words
/// spanning m > 1 sub-words enumerate per-position top-K combinations —
/// capped at `max_subword_combinations` by per-position rank sum — and rank
/// the decodable ones by ascending pseudo-perplexity of the substituted span
/// in context, keeping K. Both paths then drop the original word, its
/// antonyms, and pure punctuation. An empty result is a legal outcome.
pub fn candidates_for_word(
    view: &TokenizedExample,
    word_position: usize,
    tokenizer: &SubwordTokenizer,
    mlm: &dyn MlmScorer,
    synonyms: &SynonymResource,
    config: &AdvGenConfig,
) -> Result<Vec<String>> {
    let lists = candidates_for_words(view, &[word_position], tokenizer, mlm, synonyms, config)?;
    Ok(lists.into_iter().next().unwrap())
}

/// [`candidates_for_word`] for several positions at once, sharing the single
/// unmasked masked-LM forward across all of them.
pub fn candidates_for_words(
    view: &TokenizedExample,
    word_positions: &[usize],
    tokenizer: &SubwordTokenizer,
    mlm: &dyn MlmScorer,
    synonyms: &SynonymResource,
    config: &AdvGenConfig,
) -> Result<Vec<Vec<String>>> {
    config.validate()?;
    for &w in word_positions {
        if w >= view.words.len() {
            return Err(Error::AdvGen(format!(
                "word position {w} out of bounds for {} words",
                view.words.len()
            )));
        }
    }
    let k = config.candidates.min(mlm.subword_vocab_size());
    let mut subword_positions = Vec::new();
    for &w in word_positions {
        let (start, end) = view.word_to_subword[w];
        subword_positions.extend(start..end);
    }
    let query = MlmQuery {
        subwords: view.subwords.clone(),
        positions: subword_positions,
    };
    let top = mlm_top_k(mlm, &query, k, MlmQueryMode::Unmasked)?;
    let by_position: BTreeMap<usize, &[crate::model::MlmCandidate]> = top
        .positions
        .iter()
        .map(|pc| (pc.position, pc.candidates.as_slice()))
        .collect();

    let mut out = Vec::with_capacity(word_positions.len());
    for &w in word_positions {
        let (start, end) = view.word_to_subword[w];
        let original = &view.words[w];
        let raw: Vec<String> = if end - start == 1 {
            by_position[&start]
                .iter()
                .filter(|c| tokenizer.is_word_final(c.token))
                .filter_map(|c| tokenizer.decode_span(&[c.token]))
                .take(k)
                .collect()
        } else {
            ranked_combinations(view, (start, end), &by_position, tokenizer, mlm, config, k)?
        };
        let mut seen = BTreeSet::new();
        let filtered: Vec<String> = raw
            .into_iter()
            .filter(|cand| cand != original)
            .filter(|cand| !synonyms.is_antonym(original, cand))
            .filter(|cand| cand.chars().any(|ch| ch.is_alphanumeric()))
            .filter(|cand| seen.insert(cand.clone()))
            .collect();
        out.push(filtered);
    }
    Ok(out)
}

/// Enumerate sub-word combinations for a multi-sub-word span, rank by
/// ascending span pseudo-perplexity, and keep the best `k` decodable words.
fn ranked_combinations(
    view: &TokenizedExample,
    span: (usize, usize),
    by_position: &BTreeMap<usize, &[crate::model::MlmCandidate]>,
    tokenizer: &SubwordTokenizer,
    mlm: &dyn MlmScorer,
    config: &AdvGenConfig,
    k: usize,
) -> Result<Vec<String>> {
    let (start, end) = span;
    let m = end - start;
    let per_position: Vec<&[crate::model::MlmCandidate]> =
        (start..end).map(|p| by_position[&p]).collect();
    let tuples = rank_sum_tuples(
        m,
        per_position.iter().map(|c| c.len()).collect::<Vec<_>>(),
        config.max_subword_combinations,
    );

    let mut scored: Vec<(f64, String)> = Vec::new();
    for tuple in tuples {
        let tokens: Vec<u32> = tuple
            .iter()
            .enumerate()
            .map(|(j, &rank)| per_position[j][rank].token)
            .collect();
        // Structural validity: interior continuations, final word boundary.
        let well_formed = tokens.iter().enumerate().all(|(j, &t)| {
            !tokenizer.is_special(t)
                && if j + 1 == m {
                    tokenizer.is_word_final(t)
                } else {
                    !tokenizer.is_word_final(t)
                }
        });
        if !well_formed {
            continue;
        }
        let Some(word) = tokenizer.decode_span(&tokens) else {
            continue;
        };
        let mut candidate_seq = view.subwords.clone();
        candidate_seq[start..end].copy_from_slice(&tokens);
        let positions: Vec<usize> = (start..end).collect();
        let ppl = span_pseudo_perplexity(mlm, &candidate_seq, &positions)?;
        scored.push((ppl, word));
    }
    // Stable sort keeps the deterministic enumeration order on ties.
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored.into_iter().take(k).map(|(_, w)| w).collect())
}

/// Index tuples over `limits` (tuple[j] < limits[j]) in ascending order of
/// rank sum, ties lexicographic, at most `cap` of them.
fn rank_sum_tuples(m: usize, limits: Vec<usize>, cap: usize) -> Vec<Vec<usize>> {
    if limits.iter().any(|&l| l == 0) {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Reverse<(usize, Vec<usize>)>> = BinaryHeap::new();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let first = vec![0usize; m];
    seen.insert(first.clone());
    heap.push(Reverse((0, first)));
    let mut out = Vec::new();
    while out.len() < cap {
        let Some(Reverse((sum, tuple))) = heap.pop() else {
            break;
        };
        for (j, &limit) in limits.iter().enumerate() {
            if tuple[j] + 1 < limit {
                let mut next = tuple.clone();
                next[j] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Reverse((sum + 1, next)));
                }
            }
        }
        out.push(tuple);
    }
    out
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Contrastive loss of the (adv, view2) pair in the generation context,
/// computed with the objective module's arithmetic.
fn closs_adv_value(
    z_adv: &Array1<f64>,
    z_view2: &Array1<f64>,
    negatives: &[(Array1<f64>, Array1<f64>)],
    temperature: f64,
) -> Result<f64> {
    if negatives.is_empty() {
        // A 2-element set: each anchor's denominator is exactly its positive,
        // so both directed terms vanish identically.
        let norm = |v: &Array1<f64>| -> Result<Array1<f64>> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n <= 0.0 {
                return Err(Error::AdvGen("zero projection vector".into()));
            }
            Ok(v / n)
        };
        let a = norm(z_adv)?;
        let b = norm(z_view2)?;
        let s = a.dot(&b) / temperature;
        let sims = [a.dot(&a) / temperature, s];
        let one_direction = crate::tensor::kernels::lse_skip(&sims, Some(0)) - s;
        return Ok(2.0 * one_direction);
    }
    let mut v1s = Vec::with_capacity(1 + negatives.len());
    let mut v2s = Vec::with_capacity(1 + negatives.len());
    v1s.push(z_adv.clone());
    v2s.push(z_view2.clone());
    for (a, b) in negatives {
        v1s.push(a.clone());
        v2s.push(b.clone());
    }
    let batch = ContrastiveBatch::new(v1s, v2s)?;
    objective::symmetric_pair_loss(&batch, (Role::View1, 0), (Role::View2, 0), temperature)
}

fn substitute_and_score(
    pair: &AugmentedPair,
    attack_positions: &[usize],
    ctx: &AdvContext,
    config: &AdvGenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AdvExample> {
    let candidate_lists = candidates_for_words(
        &pair.view1,
        attack_positions,
        ctx.tokenizer,
        ctx.mlm,
        ctx.synonyms,
        config,
    )?;
    let mut words = pair.view1.words.clone();
    for (&pos, candidates) in attack_positions.iter().zip(&candidate_lists) {
        if candidates.is_empty() {
            continue;
        }
        let pick = rng.random_range(0..candidates.len());
        words[pos] = candidates[pick].clone();
    }
    let (tokenized, kept) = retokenize_words(&pair.view1, &words, ctx.tokenizer, ctx.max_len);
    let replaced: BTreeMap<usize, ReplacedWord> = kept
        .into_iter()
        .map(|pos| {
            (
                pos,
                ReplacedWord {
                    original: pair.view1.words[pos].clone(),
                    substitute: tokenized.words[pos].clone(),
                },
            )
        })
        .collect();
    let z_adv = ctx.model.project(&tokenized.subwords)?;
    let z_view2 = ctx.model.project(&pair.view2.subwords)?;
    let closs_adv = closs_adv_value(&z_adv, &z_view2, ctx.negatives, ctx.temperature)?;
    Ok(AdvExample {
        tokenized,
        replaced,
        closs_adv,
    })
}

/// Generate a label-free adversarial example from `pair.view1`.
///
/// Words are attacked in descending importance order; each is replaced by one
/// uniformly random filtered candidate, or left unchanged when no candidate
/// survives. The result carries the contrastive loss of (adv, view2).
pub fn generate_adv(
    pair: &AugmentedPair,
    ctx: &AdvContext,
    config: &AdvGenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AdvExample> {
    config.validate()?;
    let n = pair.view1.words.len();
    if n == 0 {
        return Err(Error::AdvGen("cannot attack an example with no words".into()));
    }
    let ranking = importance_scores(
        ctx.model,
        &pair.view1,
        &pair.view2,
        ctx.temperature,
        ctx.negatives,
    )?;
    let attack = select_attack_set(&ranking, config.attack_fraction, n);
    substitute_and_score(pair, &attack, ctx, config, rng)
}

/// Ablation variant: the same pipeline with the gradient ranking removed —
/// attack positions are drawn uniformly without replacement.
pub fn generate_adv_random(
    pair: &AugmentedPair,
    ctx: &AdvContext,
    config: &AdvGenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AdvExample> {
    config.validate()?;
    let n = pair.view1.words.len();
    if n == 0 {
        return Err(Error::AdvGen("cannot attack an example with no words".into()));
    }
    let attack = sample_random_positions(rng, n, attack_budget(config.attack_fraction, n));
    substitute_and_score(pair, &attack, ctx, config, rng)
}

/// `count` distinct positions in `0..n`, uniformly at random, in draw order.
pub fn sample_random_positions(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count.min(n)).into_vec()
}
