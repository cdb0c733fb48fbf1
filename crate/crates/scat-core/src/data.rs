//! Corpus ingestion, vocabulary construction, dual tokenization, and splits.
//!
//! Every example carries two synchronized views: a word-level token list
//! (used by augmentation, synonym lookup, and word-substitution attacks) and a
//! sub-word id sequence (consumed by the encoder), linked by per-word spans.
//! The sub-word side is produced by a byte-pair-encoding tokenizer trained
//! in-repo, so the pipeline has no external model dependencies.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One classification example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
}

/// Split a text into lowercased word tokens: alphanumeric runs stay together,
/// every other non-whitespace character becomes its own token.
pub fn word_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                let mut tok = String::new();
                tok.push(ch);
                out.push(tok);
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Collapse whitespace runs to single spaces and trim.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Word-level vocabulary
// ---------------------------------------------------------------------------

/// Word-level vocabulary ordered by descending frequency (ties broken by
/// first occurrence in the corpus).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from training texts; tokens occurring fewer than `min_count`
    /// times are dropped.
    pub fn build(examples: &[LabeledExample], min_count: u64) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be ≥ 1".into()));
        }
        let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
        let mut next_rank = 0usize;
        for ex in examples {
            for tok in word_tokenize(&ex.text) {
                let entry = counts.entry(tok).or_insert_with(|| {
                    let rank = next_rank;
                    next_rank += 1;
                    (0, rank)
                });
                entry.0 += 1;
            }
        }
        let mut entries: Vec<(String, u64, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_count)
            .map(|(t, (c, r))| (t, c, r))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        if entries.is_empty() {
            return Err(Error::Vocab(format!(
                "no tokens survive min_count = {min_count}"
            )));
        }
        let tokens: Vec<String> = entries.iter().map(|e| e.0.clone()).collect();
        let counts: Vec<u64> = entries.iter().map(|e| e.1).collect();
        let mut vocab = Vocabulary {
            tokens,
            counts,
            index: HashMap::new(),
        };
        vocab.rebuild_index();
        Ok(vocab)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, token: &str) -> u64 {
        self.id_of(token).map(|i| self.counts[i]).unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Serialize as a JSON document (ordered token list + counts).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(json: &str) -> Result<Vocabulary> {
        let mut vocab: Vocabulary = serde_json::from_str(json)?;
        if vocab.tokens.len() != vocab.counts.len() {
            return Err(Error::Vocab("token/count length mismatch".into()));
        }
        vocab.rebuild_index();
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Vocab("duplicate tokens in serialized form".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

// ---------------------------------------------------------------------------
// Sub-word tokenizer (byte-pair encoding, trained in-repo)
// ---------------------------------------------------------------------------

/// Special sub-word token ids, fixed across all tokenizers.
pub mod special {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    pub const MASK: u32 = 4;
    pub const COUNT: usize = 5;
    pub const NAMES: [&str; COUNT] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
}

/// Marker appended to a word's final symbol so detokenization can restore
/// word boundaries.
const END_OF_WORD: &str = "</w>";

/// Byte-pair-encoding sub-word tokenizer.
///
/// Training starts from single characters (the last character of each word
/// carries an end-of-word marker) and repeatedly merges the most frequent
/// adjacent symbol pair, breaking ties lexicographically, until the requested
/// vocabulary size is reached or no pair occurs at least twice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubwordTokenizer {
    symbols: Vec<String>,
    merges: Vec<(String, String)>,
    #[serde(skip)]
    symbol_index: HashMap<String, u32>,
    #[serde(skip)]
    merge_rank: HashMap<(String, String), usize>,
}

impl PartialEq for SubwordTokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols && self.merges == other.merges
    }
}

impl SubwordTokenizer {
    /// Train on a corpus. `vocab_size` counts every symbol including the
    /// special tokens.
    pub fn train(examples: &[LabeledExample], vocab_size: usize) -> Result<SubwordTokenizer> {
        if vocab_size <= special::COUNT {
            return Err(Error::Config(format!(
                "sub-word vocab_size must exceed {}",
                special::COUNT
            )));
        }
        // Word frequency table over the whole corpus.
        let mut word_freq: HashMap<String, u64> = HashMap::new();
        for ex in examples {
            for tok in word_tokenize(&ex.text) {
                *word_freq.entry(tok).or_insert(0) += 1;
            }
        }
        if word_freq.is_empty() {
            return Err(Error::Vocab("cannot train sub-word tokenizer on empty corpus".into()));
        }

        // Each distinct word as a symbol sequence; sort for determinism.
        let mut words: Vec<(Vec<String>, u64)> = word_freq
            .iter()
            .map(|(w, &f)| (word_symbols(w), f))
            .collect();
        words.sort_by(|a, b| a.0.cmp(&b.0));

        // Initial alphabet.
        let mut symbol_set: Vec<String> = words
            .iter()
            .flat_map(|(syms, _)| syms.iter().cloned())
            .collect();
        symbol_set.sort();
        symbol_set.dedup();

        let mut symbols: Vec<String> = special::NAMES.iter().map(|s| s.to_string()).collect();
        symbols.extend(symbol_set);
        let mut merges: Vec<(String, String)> = Vec::new();

        while symbols.len() < vocab_size {
            // Count adjacent pairs weighted by word frequency.
            let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
            for (syms, freq) in &words {
                for pair in syms.windows(2) {
                    *pair_counts
                        .entry((pair[0].clone(), pair[1].clone()))
                        .or_insert(0) += freq;
                }
            }
            let best = pair_counts
                .into_iter()
                .filter(|(_, c)| *c >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            let merged = format!("{}{}", pair.0, pair.1);
            for (syms, _) in &mut words {
                apply_merge(syms, &pair, &merged);
            }
            symbols.push(merged);
            merges.push(pair);
        }

        let mut tok = SubwordTokenizer {
            symbols,
            merges,
            symbol_index: HashMap::new(),
            merge_rank: HashMap::new(),
        };
        tok.rebuild_index();
        Ok(tok)
    }

    fn rebuild_index(&mut self) {
        self.symbol_index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        self.merge_rank = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
    }

    /// Total number of sub-word ids (including specials).
    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    /// Whether the token closes a word (carries the end-of-word marker).
    /// Special tokens are not word-final.
    pub fn is_word_final(&self, id: u32) -> bool {
        (id as usize) >= special::COUNT && self.symbols[id as usize].ends_with(END_OF_WORD)
    }

    /// Whether the token is one of the special markers.
    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < special::COUNT
    }

    /// Encode one (lowercased) word into sub-word ids. Characters never seen
    /// during training map to `[UNK]`.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut syms = word_symbols(word);
        // Greedily apply the earliest-learned merge present in the sequence.
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for (i, pair) in syms.windows(2).enumerate() {
                if let Some(&rank) = self
                    .merge_rank
                    .get(&(pair[0].clone(), pair[1].clone()))
                {
                    if best.map(|(r, _)| rank < r).unwrap_or(true) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, pos)) = best else { break };
            let merged = format!("{}{}", self.merges[rank].0, self.merges[rank].1);
            syms[pos] = merged;
            syms.remove(pos + 1);
        }
        syms.iter()
            .map(|s| self.symbol_index.get(s).copied().unwrap_or(special::UNK))
            .collect()
    }

    /// Reconstruct the word a span of sub-word ids encodes, if it contains no
    /// unknown tokens.
    pub fn decode_span(&self, ids: &[u32]) -> Option<String> {
        let mut word = String::new();
        for &id in ids {
            if self.is_special(id) {
                return None;
            }
            word.push_str(&self.symbols[id as usize]);
        }
        word.strip_suffix(END_OF_WORD).map(|w| w.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tokenizer serializes")
    }

    pub fn from_json(json: &str) -> Result<SubwordTokenizer> {
        let mut tok: SubwordTokenizer = serde_json::from_str(json)?;
        if tok.symbols.len() < special::COUNT
            || tok.symbols[..special::COUNT]
                .iter()
                .zip(special::NAMES)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Tokenize("serialized tokenizer lacks special tokens".into()));
        }
        tok.rebuild_index();
        Ok(tok)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SubwordTokenizer> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

/// Split a word into its initial BPE symbols (characters, last one marked).
fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn apply_merge(syms: &mut Vec<String>, pair: &(String, String), merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == pair.0 && syms[i + 1] == pair.1 {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Dual-view tokenized example
// ---------------------------------------------------------------------------

/// An example in both views: word tokens and the sub-word sequence
/// `[CLS] content [SEP]`, with per-word spans into the content region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub words: Vec<String>,
    pub subwords: Vec<u32>,
    /// Half-open `(start, end)` spans into `subwords` for each word.
    pub word_to_subword: Vec<(usize, usize)>,
    pub label: Option<usize>,
}

impl TokenizedExample {
    /// Text reassembled from the word view (single spaces).
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{w}");
        }
        out
    }

    /// Number of sub-word tokens including `[CLS]`/`[SEP]`.
    pub fn subword_len(&self) -> usize {
        self.subwords.len()
    }

    /// Check the alignment invariants; used by tests and debug assertions.
    pub fn check_alignment(&self, tokenizer: &SubwordTokenizer) -> Result<()> {
        let m = self.subwords.len();
        if m < 2 || self.subwords[0] != special::CLS || self.subwords[m - 1] != special::SEP {
            return Err(Error::Tokenize("missing [CLS]/[SEP] boundary".into()));
        }
        if self.words.len() != self.word_to_subword.len() {
            return Err(Error::Tokenize("span count != word count".into()));
        }
        let mut cursor = 1; // first content position
        for (w, &(start, end)) in self.words.iter().zip(&self.word_to_subword) {
            if start != cursor || end <= start || end > m - 1 {
                return Err(Error::Tokenize(format!(
                    "span ({start},{end}) does not partition content at {cursor}"
                )));
            }
            if let Some(decoded) = tokenizer.decode_span(&self.subwords[start..end]) {
                if &decoded != w {
                    return Err(Error::Tokenize(format!(
                        "span decodes to {decoded:?}, expected {w:?}"
                    )));
                }
            }
            cursor = end;
        }
        if cursor != m - 1 {
            return Err(Error::Tokenize("spans do not cover all content tokens".into()));
        }
        Ok(())
    }
}

/// Tokenize into both views, truncating to `max_len` sub-words.
///
/// Truncation drops whole words from the end: a word whose sub-word span
/// would cross the budget is removed from both views, so alignment invariants
/// hold on the truncated example too.
pub fn tokenize_text(
    text: &str,
    label: Option<usize>,
    tokenizer: &SubwordTokenizer,
    max_len: usize,
) -> TokenizedExample {
    assert!(max_len >= 3, "max_len must fit [CLS], one token, [SEP]");
    let all_words = word_tokenize(text);
    let mut words = Vec::new();
    let mut subwords = vec![special::CLS];
    let mut spans = Vec::new();
    for word in all_words {
        let ids = tokenizer.encode_word(&word);
        if subwords.len() + ids.len() > max_len - 1 {
            break;
        }
        let start = subwords.len();
        subwords.extend_from_slice(&ids);
        spans.push((start, subwords.len()));
        words.push(word);
    }
    subwords.push(special::SEP);
    TokenizedExample {
        words,
        subwords,
        word_to_subword: spans,
        label,
    }
}

/// Tokenize a labeled example (see [`tokenize_text`]).
pub fn tokenize(
    example: &LabeledExample,
    tokenizer: &SubwordTokenizer,
    max_len: usize,
) -> TokenizedExample {
    tokenize_text(&example.text, Some(example.label), tokenizer, max_len)
}

/// Rebuild the sub-word view after editing the word list of `source`.
///
/// Word substitutions can lengthen the sub-word sequence; if the budget
/// overflows, replacements are reverted right-to-left (restoring the original
/// word at that position) until the sequence fits, so the word count is
/// always preserved. Returns the new example and the positions still carrying
/// a replacement.
pub fn retokenize_words(
    source: &TokenizedExample,
    new_words: &[String],
    tokenizer: &SubwordTokenizer,
    max_len: usize,
) -> (TokenizedExample, Vec<usize>) {
    assert_eq!(
        source.words.len(),
        new_words.len(),
        "retokenize_words: word count must be preserved"
    );
    let mut words: Vec<String> = new_words.to_vec();
    let mut replaced: Vec<usize> = words
        .iter()
        .zip(&source.words)
        .enumerate()
        .filter(|(_, (n, o))| n != o)
        .map(|(i, _)| i)
        .collect();

    loop {
        let mut subwords = vec![special::CLS];
        let mut spans = Vec::new();
        let mut fits = true;
        for word in &words {
            let ids = tokenizer.encode_word(word);
            if subwords.len() + ids.len() > max_len - 1 {
                fits = false;
                break;
            }
            let start = subwords.len();
            subwords.extend_from_slice(&ids);
            spans.push((start, subwords.len()));
        }
        if fits {
            subwords.push(special::SEP);
            return (
                TokenizedExample {
                    words,
                    subwords,
                    word_to_subword: spans,
                    label: source.label,
                },
                replaced,
            );
        }
        // Undo the latest replacement and retry; the original fit, so this
        // terminates.
        let pos = replaced
            .pop()
            .expect("original example fit the budget but reverted copy does not");
        words[pos] = source.words[pos].clone();
    }
}

// ---------------------------------------------------------------------------
// Corpus ingestion
// ---------------------------------------------------------------------------

/// Supported corpus file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// CSV rows `label,title,description` (no header).
    CsvTitleDesc,
    /// JSON lines `{"label": ..., "text": ...}`.
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_title_desc" => Ok(CorpusFormat::CsvTitleDesc),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Config(format!(
                "unknown corpus format {other:?} (expected csv_title_desc or jsonl)"
            ))),
        }
    }
}

/// Read a corpus file into labeled examples.
///
/// Labels are remapped to 0-based contiguous indices. With `known_labels`
/// provided, the position in that list is the class index and unseen label
/// strings are an error; otherwise labels are assigned by first occurrence
/// (all-integer label sets are ordered numerically instead).
pub fn ingest_corpus(
    path: &Path,
    format: CorpusFormat,
    known_labels: Option<&[String]>,
) -> Result<Vec<LabeledExample>> {
    let raw: Vec<(String, String)> = match format {
        CorpusFormat::CsvTitleDesc => read_csv_title_desc(path)?,
        CorpusFormat::Jsonl => read_jsonl(path)?,
    };
    if raw.is_empty() {
        return Err(Error::parse(path, "corpus contains no rows"));
    }

    let label_map: Vec<String> = match known_labels {
        Some(labels) => labels.to_vec(),
        None => infer_label_order(raw.iter().map(|(l, _)| l.as_str())),
    };
    let index: HashMap<&str, usize> = label_map
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut out = Vec::with_capacity(raw.len());
    for (row, (label, text)) in raw.into_iter().enumerate() {
        let Some(&id) = index.get(label.as_str()) else {
            return Err(Error::CorpusRow {
                row: row + 1,
                message: format!(
                    "unknown label {label:?}; known labels: {}",
                    label_map.join(", ")
                ),
            });
        };
        let text = normalize_whitespace(&text);
        if text.is_empty() {
            return Err(Error::CorpusRow {
                row: row + 1,
                message: "text is empty after whitespace normalization".into(),
            });
        }
        out.push(LabeledExample { text, label: id });
    }
    Ok(out)
}

/// Distinct labels in first-occurrence order; all-numeric label sets are
/// sorted numerically so AG-style `1..4` class ids map to `0..3`.
fn infer_label_order<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = Vec::new();
    for l in labels {
        if !seen.iter().any(|s| s == l) {
            seen.push(l.to_string());
        }
    }
    let numeric: Option<Vec<i64>> = seen.iter().map(|s| s.parse().ok()).collect();
    if let Some(mut nums) = numeric {
        nums.sort_unstable();
        return nums.iter().map(|n| n.to_string()).collect();
    }
    seen
}

fn read_csv_title_desc(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CorpusRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        if record.len() < 2 || record.len() > 3 {
            return Err(Error::CorpusRow {
                row: i + 1,
                message: format!("expected label,title[,description], got {} fields", record.len()),
            });
        }
        let label = record[0].trim().to_string();
        let title = record[1].to_string();
        let desc = record.get(2).unwrap_or("").to_string();
        let text = if desc.trim().is_empty() {
            title
        } else {
            format!("{title} {desc}")
        };
        rows.push((label, text));
    }
    Ok(rows)
}

fn read_jsonl(path: &Path) -> Result<Vec<(String, String)>> {
    #[derive(Deserialize)]
    struct Row {
        label: serde_json::Value,
        text: String,
    }
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line).map_err(|e| Error::CorpusRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        let label = match &row.label {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::CorpusRow {
                    row: i + 1,
                    message: format!("label must be string or number, got {other}"),
                })
            }
        };
        rows.push((label, row.text));
    }
    Ok(rows)
}

/// Number of classes implied by the labels (max label + 1).
pub fn num_classes(examples: &[LabeledExample]) -> usize {
    examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Dataset splits
// ---------------------------------------------------------------------------

/// Train/validation/test partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub split_seed: u64,
}

/// Index form of [`DatasetSplits`]; this is what gets serialized, alongside
/// the seed, so splits can be reproduced against the source corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub split_seed: u64,
}

impl SplitIndices {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SplitIndices> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&json)?)
    }

    /// Materialize the splits against the corpus they were computed from.
    pub fn apply(&self, examples: &[LabeledExample]) -> Result<DatasetSplits> {
        let pick = |ids: &[usize]| -> Result<Vec<LabeledExample>> {
            ids.iter()
                .map(|&i| {
                    examples
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("split index {i} out of range")))
                })
                .collect()
        };
        Ok(DatasetSplits {
            train: pick(&self.train)?,
            validation: pick(&self.validation)?,
            test: pick(&self.test)?,
            split_seed: self.split_seed,
        })
    }
}

/// Compute the index partition for [`make_splits`].
pub fn split_indices(
    n: usize,
    test_size: usize,
    val_size: usize,
    split_seed: u64,
) -> Result<SplitIndices> {
    if test_size + val_size > n {
        return Err(Error::Config(format!(
            "cannot carve test {test_size} + validation {val_size} from {n} examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher–Yates with a named stream keyed only by the split seed.
    let mut rng = rng::stream(split_seed, "splits", &[n as u64]);
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let mut test: Vec<usize> = order[..test_size].to_vec();
    let mut validation: Vec<usize> = order[test_size..test_size + val_size].to_vec();
    let mut train: Vec<usize> = order[test_size + val_size..].to_vec();
    // Keep corpus order within each split.
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
        split_seed,
    })
}

/// Randomly carve test and validation sets out of a corpus; the remainder is
/// the training set. Reproducible given `split_seed`.
pub fn make_splits(
    examples: &[LabeledExample],
    test_size: usize,
    val_size: usize,
    split_seed: u64,
) -> Result<DatasetSplits> {
    split_indices(examples.len(), test_size, val_size, split_seed)?.apply(examples)
}
