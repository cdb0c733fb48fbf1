//! Stochastic word-substitution augmentation.
//!
//! Each word of an example is independently kept with probability
//! `keep_probability` and otherwise replaced — in `random_token` mode by a
//! uniform draw from the word vocabulary, in `synonym` mode by a uniform draw
//! from the word's synonym set (words without synonyms are never replaced).
//! The sub-word view is re-derived after replacement; substitutions that
//! would overflow the sub-word budget are reverted (see
//! [`crate::data::retokenize_words`]), so augmentation never changes the word
//! count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{retokenize_words, SubwordTokenizer, TokenizedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;
use crate::synonyms::SynonymResource;

/// How replacement words are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    RandomToken,
    Synonym,
}

/// Augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability of keeping a word unchanged (the default keeps with 0.7,
    /// i.e. a 30% replacement rate).
    pub keep_probability: f64,
    pub mode: AugmentMode,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            keep_probability: 0.7,
            mode: AugmentMode::RandomToken,
            rng_seed: 2020,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return Err(Error::Config(format!(
                "keep_probability must be in [0,1], got {}",
                self.keep_probability
            )));
        }
        Ok(())
    }
}

/// Two augmented views of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPair {
    pub view1: TokenizedExample,
    pub view2: TokenizedExample,
    pub source: TokenizedExample,
    pub replaced_positions_1: Vec<usize>,
    pub replaced_positions_2: Vec<usize>,
}

/// Resources augmentation draws replacements from.
#[derive(Clone, Copy)]
pub struct AugmentContext<'a> {
    pub vocab: &'a Vocabulary,
    pub synonyms: Option<&'a SynonymResource>,
    pub tokenizer: &'a SubwordTokenizer,
    pub max_len: usize,
}

/// One augmentation draw. Returns the augmented example and the positions
/// whose replacement survived the sub-word budget.
pub fn augment_once(
    example: &TokenizedExample,
    ctx: AugmentContext,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TokenizedExample, Vec<usize>)> {
    config.validate()?;
    if config.mode == AugmentMode::RandomToken && ctx.vocab.is_empty() {
        return Err(Error::Config("random_token augmentation needs a non-empty vocabulary".into()));
    }
    if config.mode == AugmentMode::Synonym && ctx.synonyms.is_none() {
        return Err(Error::Config("synonym augmentation needs a synonym resource".into()));
    }

    let mut words = example.words.clone();
    for word in words.iter_mut() {
        let keep: f64 = rng.random();
        if keep < config.keep_probability {
            continue;
        }
        match config.mode {
            AugmentMode::RandomToken => {
                let idx = rng.random_range(0..ctx.vocab.len());
                *word = ctx.vocab.token(idx).to_string();
            }
            AugmentMode::Synonym => {
                let syns = ctx.synonyms.expect("checked above").synonyms_of(word);
                if syns.is_empty() {
                    continue; // absent from the resource → never replaced
                }
                let idx = rng.random_range(0..syns.len());
                *word = syns[idx].word.clone();
            }
        }
    }
    let (augmented, replaced) = retokenize_words(example, &words, ctx.tokenizer, ctx.max_len);
    Ok((augmented, replaced))
}

/// Draw the two views of an example with disjoint named RNG streams keyed by
/// `(seed, example_index, view, epoch)`, so results are reproducible under
/// any data-loader ordering.
pub fn augment_pair(
    example: &TokenizedExample,
    ctx: AugmentContext,
    config: &AugmentConfig,
    example_index: u64,
    epoch: u64,
) -> Result<AugmentedPair> {
    let (view1, replaced_positions_1) = augment_once(
        example,
        ctx,
        config,
        &mut view_stream(config.rng_seed, example_index, 1, epoch),
    )?;
    let (view2, replaced_positions_2) = augment_once(
        example,
        ctx,
        config,
        &mut view_stream(config.rng_seed, example_index, 2, epoch),
    )?;
    Ok(AugmentedPair {
        view1,
        view2,
        source: example.clone(),
        replaced_positions_1,
        replaced_positions_2,
    })
}

/// A third independent view (the extra-augmentation ablation regime).
pub fn augment_extra_view(
    example: &TokenizedExample,
    ctx: AugmentContext,
    config: &AugmentConfig,
    example_index: u64,
    epoch: u64,
) -> Result<(TokenizedExample, Vec<usize>)> {
    augment_once(
        example,
        ctx,
        config,
        &mut view_stream(config.rng_seed, example_index, 3, epoch),
    )
}

fn view_stream(seed: u64, example_index: u64, view: u64, epoch: u64) -> ChaCha8Rng {
    rng::stream(seed, "augment", &[example_index, view, epoch])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize_text, LabeledExample};

    fn fixtures() -> (Vocabulary, SubwordTokenizer) {
        let corpus: Vec<LabeledExample> = [
            "the cat sat on the mat",
            "a dog ran in the park",
            "cats and dogs play fast",
            "the bird flew over town",
        ]
        .iter()
        .map(|t| LabeledExample {
            text: t.to_string(),
            label: 0,
        })
        .collect();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let tok = SubwordTokenizer::train(&corpus, 60).unwrap();
        (vocab, tok)
    }

    fn ctx<'a>(
        vocab: &'a Vocabulary,
        tok: &'a SubwordTokenizer,
        synonyms: Option<&'a SynonymResource>,
    ) -> AugmentContext<'a> {
        AugmentContext {
            vocab,
            synonyms,
            tokenizer: tok,
            max_len: 64,
        }
    }

    #[test]
    fn keep_probability_one_is_identity() {
        let (vocab, tok) = fixtures();
        let ex = tokenize_text("the cat sat on the mat", Some(0), &tok, 64);
        let cfg = AugmentConfig {
            keep_probability: 1.0,
            ..Default::default()
        };
        let mut r = rng::stream(1, "t", &[]);
        let (out, replaced) = augment_once(&ex, ctx(&vocab, &tok, None), &cfg, &mut r).unwrap();
        assert_eq!(out, ex);
        assert!(replaced.is_empty());
    }

    #[test]
    fn keep_probability_zero_replaces_every_position() {
        let (vocab, tok) = fixtures();
        let ex = tokenize_text("the cat sat on the mat", Some(0), &tok, 64);
        let cfg = AugmentConfig {
            keep_probability: 0.0,
            ..Default::default()
        };
        let mut r = rng::stream(2, "t", &[]);
        let (out, replaced) = augment_once(&ex, ctx(&vocab, &tok, None), &cfg, &mut r).unwrap();
        assert_eq!(replaced.len(), ex.words.len());
        for w in &out.words {
            assert!(vocab.contains(w), "replacement {w} not in vocab");
        }
        out.check_alignment(&tok).unwrap();
    }

    #[test]
    fn replacement_rate_converges_to_complement_of_keep() {
        let (vocab, tok) = fixtures();
        let ex = tokenize_text("the cat sat on the mat dog ran park and", Some(0), &tok, 64);
        let cfg = AugmentConfig {
            keep_probability: 0.7,
            ..Default::default()
        };
        let mut replaced = 0usize;
        let mut total = 0usize;
        for i in 0..1000 {
            let mut r = rng::stream(3, "mc", &[i]);
            let (_, rep) = augment_once(&ex, ctx(&vocab, &tok, None), &cfg, &mut r).unwrap();
            replaced += rep.len();
            total += ex.words.len();
        }
        let rate = replaced as f64 / total as f64;
        assert!(
            (rate - 0.3).abs() < 0.02,
            "replacement rate {rate} not within 0.30 ± 0.02 over {total} tokens"
        );
    }

    #[test]
    fn augmentation_preserves_word_count_and_alignment() {
        let (vocab, tok) = fixtures();
        let ex = tokenize_text("dogs play fast in the park", Some(2), &tok, 64);
        for seed in 0..20 {
            let mut r = rng::stream(seed, "t", &[]);
            let cfg = AugmentConfig {
                keep_probability: 0.3,
                ..Default::default()
            };
            let (out, _) = augment_once(&ex, ctx(&vocab, &tok, None), &cfg, &mut r).unwrap();
            assert_eq!(out.words.len(), ex.words.len());
            assert_eq!(out.label, ex.label);
            out.check_alignment(&tok).unwrap();
        }
    }

    #[test]
    fn synonym_mode_only_uses_listed_synonyms() {
        let (vocab, tok) = fixtures();
        let mut res = SynonymResource::new();
        res.add_synonym("cat", "cats", 0.9);
        res.add_synonym("dog", "dogs", 0.9);
        let ex = tokenize_text("the cat sat near a dog", Some(0), &tok, 64);
        let cfg = AugmentConfig {
            keep_probability: 0.0,
            mode: AugmentMode::Synonym,
            rng_seed: 5,
        };
        let mut r = rng::stream(5, "t", &[]);
        let (out, replaced) = augment_once(&ex, ctx(&vocab, &tok, Some(&res)), &cfg, &mut r).unwrap();
        // Only "cat" and "dog" have synonym entries; everything else is kept.
        assert_eq!(replaced, vec![1, 5]);
        assert_eq!(out.words[1], "cats");
        assert_eq!(out.words[5], "dogs");
        assert_eq!(out.words[0], "the");
    }

    #[test]
    fn pair_views_are_deterministic_and_independent() {
        let (vocab, tok) = fixtures();
        let ex = tokenize_text("the cat sat on the mat dog ran", Some(0), &tok, 64);
        let cfg = AugmentConfig {
            keep_probability: 0.5,
            ..Default::default()
        };
        let c = ctx(&vocab, &tok, None);
        let a = augment_pair(&ex, c, &cfg, 7, 0).unwrap();
        let b = augment_pair(&ex, c, &cfg, 7, 0).unwrap();
        assert_eq!(a, b, "same seeds must reproduce the pair");
        assert_eq!(a.source, ex);
        let other_epoch = augment_pair(&ex, c, &cfg, 7, 1).unwrap();
        assert_ne!(
            (&a.view1, &a.view2),
            (&other_epoch.view1, &other_epoch.view2),
            "different epoch should redraw augmentations"
        );
    }

    #[test]
    fn pair_views_differ_on_long_sentences() {
        let (vocab, tok) = fixtures();
        let long = vec!["cat"; 50].join(" ");
        let ex = tokenize_text(&long, Some(0), &tok, 128);
        let cfg = AugmentConfig {
            keep_probability: 0.7,
            ..Default::default()
        };
        let c = AugmentContext {
            vocab: &vocab,
            synonyms: None,
            tokenizer: &tok,
            max_len: 128,
        };
        let mut differing = 0;
        for seed in 0..100 {
            let cfg = AugmentConfig {
                rng_seed: seed,
                ..cfg
            };
            let pair = augment_pair(&ex, c, &cfg, 0, 0).unwrap();
            if pair.view1.words != pair.view2.words {
                differing += 1;
            }
        }
        assert!(differing >= 95, "only {differing}/100 pairs differ");
    }
}
