//! Counter-fitted-style synonym/antonym resource.
//!
//! The resource maps words to scored synonym neighbors and to antonym lists.
//! Synonym entries drive synonym-mode augmentation and the synonym-greedy
//! attacker; antonym lists drive the candidate filters of the adversarial
//! generator and the masked-LM attacker.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::cosine;
use crate::tensor::Mat;

/// A synonym neighbor with its similarity score (1.0 when the source file
/// does not carry scores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymEntry {
    pub word: String,
    pub score: f64,
}

/// Word → synonyms (scored, sorted by descending score) and word → antonyms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymResource {
    synonyms: BTreeMap<String, Vec<SynonymEntry>>,
    antonyms: BTreeMap<String, Vec<String>>,
    /// Number of malformed entries skipped while loading.
    pub skipped_entries: usize,
}

/// On-disk form: either a bare JSON map `{"good": ["great", "fine"]}` or the
/// full form with scores and antonyms.
#[derive(Serialize, Deserialize)]
struct FullForm {
    synonyms: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    antonyms: BTreeMap<String, Vec<String>>,
}

impl SynonymResource {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a synonym edge (kept sorted by descending score, ties by word).
    pub fn add_synonym(&mut self, word: &str, synonym: &str, score: f64) {
        let list = self.synonyms.entry(word.to_lowercase()).or_default();
        list.push(SynonymEntry {
            word: synonym.to_lowercase(),
            score,
        });
        list.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.word.cmp(&b.word))
        });
    }

    pub fn add_antonym(&mut self, word: &str, antonym: &str) {
        let list = self.antonyms.entry(word.to_lowercase()).or_default();
        let antonym = antonym.to_lowercase();
        if !list.contains(&antonym) {
            list.push(antonym);
            list.sort();
        }
    }

    /// Scored synonyms of `word` (descending score); empty if absent.
    pub fn synonyms_of(&self, word: &str) -> &[SynonymEntry] {
        self.synonyms
            .get(&word.to_lowercase())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Antonyms of `word`; empty if the word has no entry.
    pub fn antonyms_of(&self, word: &str) -> &[String] {
        self.antonyms
            .get(&word.to_lowercase())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn is_antonym(&self, word: &str, candidate: &str) -> bool {
        self.antonyms_of(word)
            .iter()
            .any(|a| a == &candidate.to_lowercase())
    }

    pub fn has_entry(&self, word: &str) -> bool {
        self.synonyms.contains_key(&word.to_lowercase())
    }

    pub fn num_words(&self) -> usize {
        self.synonyms.len()
    }

    /// Build from word embeddings: `synonyms(w)` = every other word whose
    /// cosine similarity with `w` reaches `threshold`, scored by that cosine.
    pub fn from_embeddings(words: &[String], vectors: &Mat, threshold: f64) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::Config(format!(
                "{} words but {} embedding rows",
                words.len(),
                vectors.nrows()
            )));
        }
        let mut out = SynonymResource::new();
        for i in 0..words.len() {
            let vi: Vec<f64> = vectors.row(i).to_vec();
            for j in 0..words.len() {
                if i == j {
                    continue;
                }
                let vj: Vec<f64> = vectors.row(j).to_vec();
                let sim = cosine(&vi, &vj);
                if sim >= threshold {
                    out.add_synonym(&words[i], &words[j], sim);
                }
            }
        }
        Ok(out)
    }

    /// Load from JSON (bare-map or full form). Malformed synonym entries are
    /// skipped and counted in `skipped_entries`.
    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json).map_err(|e| match e {
            Error::Json(inner) => Error::parse(path, inner.to_string()),
            other => other,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("synonym resource must be a JSON object".into()))?;

        let mut out = SynonymResource::new();
        if obj.contains_key("synonyms") {
            let full: FullForm = serde_json::from_value(value.clone())?;
            for (word, neighbors) in full.synonyms {
                for (syn, score) in neighbors {
                    out.add_synonym(&word, &syn, score);
                }
            }
            for (word, ants) in full.antonyms {
                for a in ants {
                    out.add_antonym(&word, &a);
                }
            }
            return Ok(out);
        }

        // Bare map: word → list of synonym words.
        for (word, entry) in obj {
            match entry.as_array() {
                Some(list) => {
                    for item in list {
                        match item.as_str() {
                            Some(s) => out.add_synonym(word, s, 1.0),
                            None => out.skipped_entries += 1,
                        }
                    }
                }
                None => out.skipped_entries += 1,
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let full = FullForm {
            synonyms: self
                .synonyms
                .iter()
                .map(|(w, list)| {
                    (
                        w.clone(),
                        list.iter().map(|e| (e.word.clone(), e.score)).collect(),
                    )
                })
                .collect(),
            antonyms: self.antonyms.clone(),
        };
        serde_json::to_string_pretty(&full).expect("resource serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
