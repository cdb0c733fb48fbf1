//! Bundled synthetic 4-class corpus for desk-scale experiments.
//!
//! Sentences are bags of class-indicator words embedded in neutral filler
//! text. Each class owns six common indicators; each indicator has a rare
//! "twin" that the bundled synonym resource declares a high-scoring synonym.
//! The twins also appear as classless background noise — uniformly across all
//! labels — so they carry no label signal of their own. That gives
//! word-substitution attackers a natural lever: swapping an indicator for its
//! twin deletes label evidence while staying inside the synonym relation, and
//! a model that anchors on a few surface forms loses its prediction, while a
//! model with redundant, substitution-invariant features keeps it.
//!
//! Everything is generated deterministically from a seed, so the corpus ships
//! as code; [`generate`] reproduces it bit-for-bit anywhere.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplits, LabeledExample};
use crate::error::{Error, Result};
use crate::rng;
use crate::synonyms::SynonymResource;

pub const NUM_CLASSES: usize = 4;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["weather", "finance", "sports", "food"];

/// Common label-bearing words, six per class.
pub const INDICATORS: [[&str; 6]; NUM_CLASSES] = [
    ["rain", "wind", "storm", "cloud", "frost", "thunder"],
    ["bank", "trade", "profit", "market", "loan", "stock"],
    ["team", "match", "score", "coach", "goal", "league"],
    ["bread", "cheese", "butter", "grape", "salt", "honey"],
];

/// Rare twin of each indicator: a high-scoring synonym in the bundled
/// resource, but distributed as classless noise in the corpus itself.
pub const RARE_TWINS: [[&str; 6]; NUM_CLASSES] = [
    ["drizzle", "gust", "tempest", "mist", "chill", "rumble"],
    ["ledger", "barter", "dividend", "bazaar", "credit", "bond"],
    ["squad", "fixture", "tally", "mentor", "strike", "division"],
    ["loaf", "curd", "cream", "raisin", "pepper", "nectar"],
];

/// Label-neutral filler words.
pub const FILLERS: [&str; 24] = [
    "the", "a", "on", "in", "it", "was", "day", "time", "man", "road", "house", "light", "over",
    "near", "after", "before", "small", "large", "old", "new", "still", "again", "very", "quite",
];

/// Shape of the generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Sentence length bounds (words), inclusive.
    pub min_words: usize,
    pub max_words: usize,
    /// Indicator words per sentence, inclusive bounds.
    pub min_indicators: usize,
    pub max_indicators: usize,
    /// Probability that a sentence carries one rare twin (of a uniformly
    /// random class family) on a filler position.
    pub noise_twin_probability: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            train_per_class: 500,
            val_per_class: 50,
            test_per_class: 125,
            min_words: 8,
            max_words: 12,
            min_indicators: 3,
            max_indicators: 4,
            noise_twin_probability: 0.3,
            seed: 2020,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config(
                "every split needs at least one example per class".to_string(),
            ));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config(format!(
                "word count bounds [{}, {}] are invalid",
                self.min_words, self.max_words
            )));
        }
        if self.min_indicators == 0 || self.min_indicators > self.max_indicators {
            return Err(Error::Config(format!(
                "indicator count bounds [{}, {}] are invalid",
                self.min_indicators, self.max_indicators
            )));
        }
        if self.max_indicators > self.min_words {
            return Err(Error::Config(format!(
                "up to {} indicators cannot fit a {}-word sentence",
                self.max_indicators, self.min_words
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_twin_probability)
            || !self.noise_twin_probability.is_finite()
        {
            return Err(Error::Config(format!(
                "noise_twin_probability must lie in [0, 1], got {}",
                self.noise_twin_probability
            )));
        }
        Ok(())
    }
}

fn sentence(class: usize, config: &ToyCorpusConfig, r: &mut ChaCha8Rng) -> String {
    let len = r.random_range(config.min_words..=config.max_words);
    let hi = config.max_indicators.min(len);
    let lo = config.min_indicators.min(hi);
    let k = r.random_range(lo..=hi);

    let mut words: Vec<&str> = (0..len)
        .map(|_| FILLERS[r.random_range(0..FILLERS.len())])
        .collect();
    let slots: Vec<usize> = rand::seq::index::sample(r, len, k).into_vec();
    for &slot in &slots {
        words[slot] = INDICATORS[class][r.random_range(0..6)];
    }
    if r.random::<f64>() < config.noise_twin_probability {
        let fillers: Vec<usize> = (0..len).filter(|p| !slots.contains(p)).collect();
        if let Some(&p) = fillers.choose(r) {
            let family = r.random_range(0..NUM_CLASSES);
            words[p] = RARE_TWINS[family][r.random_range(0..6)];
        }
    }
    words.join(" ")
}

/// Generate the corpus. Every example has its own random stream keyed by
/// (split, class, index), and sentences are globally unique, so the three
/// splits are disjoint and each is reproducible in isolation.
pub fn generate(config: &ToyCorpusConfig) -> Result<DatasetSplits> {
    config.validate()?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut build = |split: u64, per_class: usize| -> Vec<LabeledExample> {
        let mut examples = Vec::with_capacity(per_class * NUM_CLASSES);
        for i in 0..per_class {
            for class in 0..NUM_CLASSES {
                for attempt in 0u64.. {
                    let mut r = rng::stream(
                        config.seed,
                        "toy-corpus",
                        &[split, class as u64, i as u64, attempt],
                    );
                    let text = sentence(class, config, &mut r);
                    if seen.insert(text.clone()) {
                        examples.push(LabeledExample { text, label: class });
                        break;
                    }
                }
            }
        }
        examples
    };
    Ok(DatasetSplits {
        train: build(0, config.train_per_class),
        validation: build(1, config.val_per_class),
        test: build(2, config.test_per_class),
        split_seed: config.seed,
    })
}

/// The synonym/antonym resource that accompanies the corpus.
///
/// Each indicator and its rare twin are mutual synonyms above the default
/// 0.5 similarity threshold; same-class sibling indicators sit below it.
/// Indicators of different classes are declared mutual antonyms, giving the
/// antonym filter real work on masked-LM candidates.
pub fn synonym_resource() -> SynonymResource {
    let mut resource = SynonymResource::new();
    for class in 0..NUM_CLASSES {
        for i in 0..6 {
            let common = INDICATORS[class][i];
            let twin = RARE_TWINS[class][i];
            resource.add_synonym(common, twin, 0.85);
            resource.add_synonym(twin, common, 0.85);
            resource.add_synonym(common, INDICATORS[class][(i + 1) % 6], 0.45);
        }
    }
    for a in 0..NUM_CLASSES {
        for b in 0..NUM_CLASSES {
            if a == b {
                continue;
            }
            for i in 0..6 {
                for j in 0..6 {
                    resource.add_antonym(INDICATORS[a][i], INDICATORS[b][j]);
                }
            }
        }
    }
    resource
}

/// Write examples as JSON lines compatible with corpus ingestion
/// (`{"label": <class index>, "text": ...}`).
pub fn write_corpus_jsonl(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for example in examples {
        let line = serde_json::json!({ "label": example.label, "text": example.text });
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
