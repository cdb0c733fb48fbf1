//! Flat experiment configuration.
//!
//! One experiment is described by one flat TOML file: every key is a scalar
//! (or a list of scalars) at the top level, so any key can also be supplied
//! on the command line as `--set key=value`. Unknown keys are rejected with
//! an error that lists the valid ones, and the `SCAT_SEED` environment
//! variable (a comma-separated list) overrides the configured seed list for
//! smoke runs.
//!
//! [`ExperimentConfig`] stores the raw keys; the `*_config` methods resolve
//! them into the per-module configuration types. Schedule- and
//! architecture-shaped keys (`schedule`, `encoder`) select a preset, and the
//! corresponding `Option` keys override individual fields of that preset, so
//! the resolution never depends on the order keys appear in.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advgen::AdvGenConfig;
use crate::attack::{AttackConfig, AttackerKind};
use crate::augment::{AugmentConfig, AugmentMode};
use crate::data::{ingest_corpus, CorpusFormat, DatasetSplits};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, EvalMode};
use crate::model::{EncoderConfig, ProjectorConfig};
use crate::objective::ObjectiveConfig;
use crate::synonyms::SynonymResource;
use crate::toy::ToyCorpusConfig;
use crate::train::{MlmTrainConfig, Regime, TrainConfig, DEFAULT_SEEDS};

/// Where the train/validation/test splits come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// The bundled generated corpus (see [`crate::toy`]).
    Toy,
    /// Explicit `train_file` / `val_file` / `test_file` paths.
    Files,
}

/// Encoder architecture preset, individually overridable via `encoder_*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderPreset {
    Desk,
    BertBase,
}

/// Training schedule preset, individually overridable via `epochs` etc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePreset {
    /// Short schedules and a from-scratch learning rate for the desk encoder.
    Desk,
    /// 50 epochs, 3 warm-up.
    Ag,
    /// 10 epochs, 1 warm-up.
    Dbpedia,
}

/// The flat key set describing one experiment.
///
/// Every field is a config-file key of the same name. Fields typed
/// `Option<_>` default to the value implied by the relevant preset key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // -- corpus ----------------------------------------------------------
    pub corpus: CorpusSource,
    pub corpus_format: CorpusFormat,
    pub train_file: Option<PathBuf>,
    pub val_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    /// Label universe for file corpora, in class-index order. Required when
    /// `corpus = "files"` so every split maps labels identically.
    pub labels: Vec<String>,
    /// Synonym/antonym resource file for file corpora; the toy corpus
    /// carries a built-in resource.
    pub synonyms_file: Option<PathBuf>,
    pub toy_train_per_class: usize,
    pub toy_val_per_class: usize,
    pub toy_test_per_class: usize,
    pub toy_seed: u64,

    // -- tokenization ----------------------------------------------------
    pub subword_vocab_size: usize,
    pub vocab_min_count: u64,

    // -- model -----------------------------------------------------------
    pub encoder: EncoderPreset,
    pub encoder_layers: Option<usize>,
    pub encoder_heads: Option<usize>,
    pub encoder_hidden_dim: Option<usize>,
    pub encoder_ff_dim: Option<usize>,
    pub encoder_max_len: Option<usize>,
    pub projector_dim: usize,

    // -- objective / augmentation / adversarial generation ---------------
    pub temperature: f64,
    pub lambda: f64,
    pub keep_probability: f64,
    pub attack_fraction: f64,
    pub candidates: usize,
    pub max_subword_combinations: usize,

    // -- pre-training schedule -------------------------------------------
    pub schedule: SchedulePreset,
    pub epochs: Option<usize>,
    pub warmup_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seeds: Vec<u64>,

    // -- masked-LM provider ----------------------------------------------
    pub mlm_epochs: usize,
    pub mlm_warmup_epochs: Option<usize>,
    pub mlm_batch_size: usize,
    pub mlm_learning_rate: f64,
    pub mlm_mask_probability: f64,

    // -- evaluation --------------------------------------------------------
    pub eval_mode: EvalMode,
    pub eval_epochs: Option<usize>,
    pub eval_batch_size: Option<usize>,
    pub eval_learning_rate: Option<f64>,
    pub eval_weight_decay: Option<f64>,

    // -- attack ------------------------------------------------------------
    pub attacker: AttackerKind,
    pub synonym_sim_threshold: f64,
    pub sentence_sim_threshold: f64,
    pub antonym_filtering: bool,
    pub max_candidates: usize,
    pub query_budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let toy = ToyCorpusConfig::default();
        let mlm = MlmTrainConfig::default();
        let objective = ObjectiveConfig::default();
        let augment = AugmentConfig::default();
        let advgen = AdvGenConfig::default();
        let attack = AttackConfig::default();
        ExperimentConfig {
            corpus: CorpusSource::Toy,
            corpus_format: CorpusFormat::Jsonl,
            train_file: None,
            val_file: None,
            test_file: None,
            labels: Vec::new(),
            synonyms_file: None,
            toy_train_per_class: toy.train_per_class,
            toy_val_per_class: toy.val_per_class,
            toy_test_per_class: toy.test_per_class,
            toy_seed: toy.seed,
            subword_vocab_size: 320,
            vocab_min_count: 1,
            encoder: EncoderPreset::Desk,
            encoder_layers: None,
            encoder_heads: None,
            encoder_hidden_dim: None,
            encoder_ff_dim: None,
            encoder_max_len: None,
            projector_dim: ProjectorConfig::default().output_dim,
            temperature: objective.temperature,
            lambda: objective.lambda,
            keep_probability: augment.keep_probability,
            attack_fraction: advgen.attack_fraction,
            candidates: advgen.candidates,
            max_subword_combinations: advgen.max_subword_combinations,
            schedule: SchedulePreset::Desk,
            epochs: None,
            warmup_epochs: None,
            batch_size: None,
            learning_rate: None,
            weight_decay: None,
            seeds: DEFAULT_SEEDS.to_vec(),
            mlm_epochs: mlm.epochs,
            mlm_warmup_epochs: None,
            mlm_batch_size: mlm.batch_size,
            mlm_learning_rate: mlm.learning_rate,
            mlm_mask_probability: mlm.mask_probability,
            eval_mode: EvalMode::Linear,
            eval_epochs: None,
            eval_batch_size: None,
            eval_learning_rate: None,
            eval_weight_decay: None,
            attacker: attack.attacker,
            synonym_sim_threshold: attack.synonym_sim_threshold,
            sentence_sim_threshold: attack.sentence_sim_threshold,
            antonym_filtering: attack.antonym_filtering,
            max_candidates: attack.max_candidates,
            query_budget: attack.query_budget,
        }
    }
}

/// Parse one `--set` value: anything that parses as a TOML value (number,
/// bool, list, quoted string) is taken as such, anything else as a bare
/// string — so `--set schedule=ag` works without quoting.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("value = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table.remove("value").expect("key just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    /// Parse a config document, then apply `key=value` overrides on top.
    /// Unknown keys in either place fail with the list of valid keys.
    pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for entry in overrides {
            let (key, raw) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("override '{entry}' is not of the form key=value"))
            })?;
            table.insert(key.trim().to_string(), parse_override_value(raw.trim()));
        }
        let config: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// [`ExperimentConfig::parse`] on a file (an absent `--config` is
    /// represented by parsing an empty document).
    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text, overrides)
    }

    /// Serialize back to a TOML document (all keys explicit).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.corpus == CorpusSource::Files {
            for (key, value) in [
                ("train_file", &self.train_file),
                ("val_file", &self.val_file),
                ("test_file", &self.test_file),
            ] {
                if value.is_none() {
                    return Err(Error::Config(format!(
                        "corpus = \"files\" requires the {key} key"
                    )));
                }
            }
            if self.labels.len() < 2 {
                return Err(Error::Config(
                    "corpus = \"files\" requires labels, the class list in index order".into(),
                ));
            }
        }
        if self.subword_vocab_size < crate::data::special::COUNT + 1 {
            return Err(Error::Config(format!(
                "subword_vocab_size must exceed the {} reserved tokens",
                crate::data::special::COUNT
            )));
        }
        if self.projector_dim == 0 {
            return Err(Error::Config("projector_dim must be ≥ 1".into()));
        }
        self.toy_config().validate()?;
        self.encoder_config(self.subword_vocab_size).validate()?;
        self.objective_config().validate()?;
        self.augment_config().validate()?;
        self.advgen_config().validate()?;
        self.attack_config().validate()?;
        self.mlm_train_config().validate()?;
        self.eval_config().validate()?;
        for regime in Regime::ALL {
            self.train_config(regime).validate()?;
        }
        Ok(())
    }

    /// The seed list, with `SCAT_SEED` (comma-separated, e.g. "2020,7")
    /// taking precedence when set. Pass `std::env::var("SCAT_SEED").ok()`.
    pub fn effective_seeds(&self, env_override: Option<&str>) -> Result<Vec<u64>> {
        match env_override {
            None => Ok(self.seeds.clone()),
            Some(raw) => {
                let seeds = raw
                    .split(',')
                    .map(|part| {
                        part.trim().parse::<u64>().map_err(|_| {
                            Error::Config(format!(
                                "SCAT_SEED entry '{}' is not an unsigned integer",
                                part.trim()
                            ))
                        })
                    })
                    .collect::<Result<Vec<u64>>>()?;
                if seeds.is_empty() || raw.trim().is_empty() {
                    return Err(Error::Config("SCAT_SEED is set but empty".into()));
                }
                Ok(seeds)
            }
        }
    }

    // -- resolution into module configs -----------------------------------

    pub fn toy_config(&self) -> ToyCorpusConfig {
        ToyCorpusConfig {
            train_per_class: self.toy_train_per_class,
            val_per_class: self.toy_val_per_class,
            test_per_class: self.toy_test_per_class,
            seed: self.toy_seed,
            ..ToyCorpusConfig::default()
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let mut config = match self.encoder {
            EncoderPreset::Desk => EncoderConfig::desk(vocab_size),
            EncoderPreset::BertBase => EncoderConfig::bert_base(vocab_size),
        };
        if let Some(v) = self.encoder_layers {
            config.layers = v;
        }
        if let Some(v) = self.encoder_heads {
            config.heads = v;
        }
        if let Some(v) = self.encoder_hidden_dim {
            config.hidden_dim = v;
        }
        if let Some(v) = self.encoder_ff_dim {
            config.ff_dim = v;
        }
        if let Some(v) = self.encoder_max_len {
            config.max_len = v;
        }
        config
    }

    pub fn projector_config(&self) -> ProjectorConfig {
        ProjectorConfig {
            output_dim: self.projector_dim,
        }
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            temperature: self.temperature,
            lambda: self.lambda,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            keep_probability: self.keep_probability,
            mode: AugmentMode::RandomToken,
            rng_seed: self.seeds[0],
        }
    }

    pub fn advgen_config(&self) -> AdvGenConfig {
        AdvGenConfig {
            attack_fraction: self.attack_fraction,
            candidates: self.candidates,
            max_subword_combinations: self.max_subword_combinations,
            rng_seed: self.seeds[0],
        }
    }

    /// Training schedule for one regime: preset base, then explicit
    /// overrides. The trainer re-seeds augmentation and generation from
    /// `TrainConfig::seed`, which `run_multiseed` rotates per run.
    pub fn train_config(&self, regime: Regime) -> TrainConfig {
        let mut config = match self.schedule {
            SchedulePreset::Desk => TrainConfig::desk(regime),
            SchedulePreset::Ag => TrainConfig {
                regime,
                ..TrainConfig::default()
            },
            SchedulePreset::Dbpedia => TrainConfig::dbpedia(regime),
        };
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.warmup_epochs {
            config.warmup_epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            config.weight_decay = v;
        }
        config.seed = self.seeds[0];
        config.objective = self.objective_config();
        config.augment = self.augment_config();
        config.advgen = self.advgen_config();
        config
    }

    pub fn mlm_train_config(&self) -> MlmTrainConfig {
        let base = MlmTrainConfig::default();
        MlmTrainConfig {
            epochs: self.mlm_epochs,
            warmup_epochs: self.mlm_warmup_epochs.unwrap_or(base.warmup_epochs),
            batch_size: self.mlm_batch_size,
            learning_rate: self.mlm_learning_rate,
            mask_probability: self.mlm_mask_probability,
            seed: self.seeds[0],
            ..base
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let mut config = match self.eval_mode {
            EvalMode::Linear => EvalConfig::linear(),
            EvalMode::Finetune => EvalConfig::finetune(),
        };
        if let Some(v) = self.eval_epochs {
            config.epochs = v;
        }
        if let Some(v) = self.eval_batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.eval_learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.eval_weight_decay {
            config.weight_decay = v;
        }
        config.seed = self.seeds[0];
        config
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            attacker: self.attacker,
            synonym_sim_threshold: self.synonym_sim_threshold,
            sentence_sim_threshold: self.sentence_sim_threshold,
            antonym_filtering: self.antonym_filtering,
            max_candidates: self.max_candidates,
            query_budget: self.query_budget,
            rng_seed: self.seeds[0],
        }
    }

    // -- data loading ------------------------------------------------------

    /// Materialize the configured corpus.
    pub fn load_splits(&self) -> Result<DatasetSplits> {
        match self.corpus {
            CorpusSource::Toy => crate::toy::generate(&self.toy_config()),
            CorpusSource::Files => {
                let read = |path: &Option<PathBuf>| -> Result<Vec<_>> {
                    let path = path.as_ref().expect("validated");
                    ingest_corpus(path, self.corpus_format, Some(&self.labels))
                };
                Ok(DatasetSplits {
                    train: read(&self.train_file)?,
                    validation: read(&self.val_file)?,
                    test: read(&self.test_file)?,
                    split_seed: 0,
                })
            }
        }
    }

    /// The synonym/antonym resource matching the corpus: the built-in one
    /// for the toy corpus, `synonyms_file` otherwise (empty if unset).
    pub fn load_synonyms(&self) -> Result<SynonymResource> {
        match (&self.corpus, &self.synonyms_file) {
            (_, Some(path)) => SynonymResource::load(path),
            (CorpusSource::Toy, None) => Ok(crate::toy::synonym_resource()),
            (CorpusSource::Files, None) => Ok(SynonymResource::new()),
        }
    }

    /// Number of classes in the configured corpus.
    pub fn num_classes(&self) -> usize {
        match self.corpus {
            CorpusSource::Toy => crate::toy::NUM_CLASSES,
            CorpusSource::Files => self.labels.len(),
        }
    }
}

/// One row of the generated key-reference page.
struct KeyDoc {
    key: &'static str,
    value: &'static str,
    doc: &'static str,
}

const KEY_REFERENCE: &[KeyDoc] = &[
    KeyDoc { key: "corpus", value: "\"toy\" | \"files\"", doc: "where splits come from: the bundled generated corpus or explicit files" },
    KeyDoc { key: "corpus_format", value: "\"jsonl\" | \"csv_title_desc\"", doc: "file corpus format: JSON lines {label, text} or label,title,description CSV" },
    KeyDoc { key: "train_file", value: "path", doc: "training split (corpus = \"files\")" },
    KeyDoc { key: "val_file", value: "path", doc: "validation split (corpus = \"files\")" },
    KeyDoc { key: "test_file", value: "path", doc: "test split (corpus = \"files\")" },
    KeyDoc { key: "labels", value: "list of strings", doc: "class labels in index order (required for corpus = \"files\")" },
    KeyDoc { key: "synonyms_file", value: "path", doc: "synonym/antonym resource; the toy corpus bundles its own" },
    KeyDoc { key: "toy_train_per_class", value: "int (500)", doc: "toy corpus: training sentences per class" },
    KeyDoc { key: "toy_val_per_class", value: "int (50)", doc: "toy corpus: validation sentences per class" },
    KeyDoc { key: "toy_test_per_class", value: "int (125)", doc: "toy corpus: test sentences per class" },
    KeyDoc { key: "toy_seed", value: "int (2020)", doc: "toy corpus generator seed" },
    KeyDoc { key: "subword_vocab_size", value: "int (320)", doc: "sub-word tokenizer vocabulary size" },
    KeyDoc { key: "vocab_min_count", value: "int (1)", doc: "minimum frequency for the word-level vocabulary" },
    KeyDoc { key: "encoder", value: "\"desk\" | \"bert_base\"", doc: "encoder architecture preset" },
    KeyDoc { key: "encoder_layers", value: "int (preset)", doc: "override: transformer layers" },
    KeyDoc { key: "encoder_heads", value: "int (preset)", doc: "override: attention heads" },
    KeyDoc { key: "encoder_hidden_dim", value: "int (preset)", doc: "override: hidden width" },
    KeyDoc { key: "encoder_ff_dim", value: "int (preset)", doc: "override: feed-forward width" },
    KeyDoc { key: "encoder_max_len", value: "int (preset)", doc: "override: maximum sub-word sequence length" },
    KeyDoc { key: "projector_dim", value: "int (128)", doc: "contrastive projection head output width" },
    KeyDoc { key: "temperature", value: "float (0.5)", doc: "contrastive softmax temperature τ" },
    KeyDoc { key: "lambda", value: "float (1/256)", doc: "weight of the adversarial regularizer in the final loss" },
    KeyDoc { key: "keep_probability", value: "float (0.7)", doc: "augmentation: probability a word is kept unchanged" },
    KeyDoc { key: "attack_fraction", value: "float (0.3)", doc: "generation: fraction of words selected for substitution (ε)" },
    KeyDoc { key: "candidates", value: "int (48)", doc: "generation: masked-LM candidates per position (K)" },
    KeyDoc { key: "max_subword_combinations", value: "int (512)", doc: "generation: cap on multi-sub-word candidate combinations" },
    KeyDoc { key: "schedule", value: "\"desk\" | \"ag\" | \"dbpedia\"", doc: "training schedule preset" },
    KeyDoc { key: "epochs", value: "int (preset)", doc: "override: pre-training epochs" },
    KeyDoc { key: "warmup_epochs", value: "int (preset)", doc: "override: linear learning-rate warm-up epochs" },
    KeyDoc { key: "batch_size", value: "int (preset)", doc: "override: pre-training batch size" },
    KeyDoc { key: "learning_rate", value: "float (preset)", doc: "override: AdamW learning rate" },
    KeyDoc { key: "weight_decay", value: "float (preset)", doc: "override: AdamW weight decay" },
    KeyDoc { key: "seeds", value: "list of ints ([2020, 2010, 2000])", doc: "seeds to repeat each run over; SCAT_SEED overrides" },
    KeyDoc { key: "mlm_epochs", value: "int (30)", doc: "masked-LM provider: training epochs" },
    KeyDoc { key: "mlm_warmup_epochs", value: "int (1)", doc: "masked-LM provider: warm-up epochs" },
    KeyDoc { key: "mlm_batch_size", value: "int (32)", doc: "masked-LM provider: batch size" },
    KeyDoc { key: "mlm_learning_rate", value: "float (2e-3)", doc: "masked-LM provider: learning rate" },
    KeyDoc { key: "mlm_mask_probability", value: "float (0.15)", doc: "masked-LM provider: fraction of positions predicted per epoch" },
    KeyDoc { key: "eval_mode", value: "\"linear\" | \"finetune\"", doc: "evaluation: linear probe on the frozen encoder, or full fine-tune" },
    KeyDoc { key: "eval_epochs", value: "int (preset)", doc: "override: evaluation epochs" },
    KeyDoc { key: "eval_batch_size", value: "int (preset)", doc: "override: evaluation batch size" },
    KeyDoc { key: "eval_learning_rate", value: "float (preset)", doc: "override: evaluation learning rate" },
    KeyDoc { key: "eval_weight_decay", value: "float (preset)", doc: "override: evaluation weight decay" },
    KeyDoc { key: "attacker", value: "\"synonym_greedy\" | \"mlm_greedy\" | \"labelfree\"", doc: "default attacker for attack runs" },
    KeyDoc { key: "synonym_sim_threshold", value: "float (0.5)", doc: "attack: minimum synonym score for a candidate" },
    KeyDoc { key: "sentence_sim_threshold", value: "float (0.5)", doc: "attack: minimum sentence cosine similarity after a substitution" },
    KeyDoc { key: "antonym_filtering", value: "bool (false)", doc: "attack: drop masked-LM candidates that are antonyms of the original" },
    KeyDoc { key: "max_candidates", value: "int (48)", doc: "attack: candidates considered per position" },
    KeyDoc { key: "query_budget", value: "int (2000)", doc: "attack: maximum victim queries per example" },
];

/// Render the generated configuration reference page (markdown).
pub fn reference_page() -> String {
    let mut out = String::from(
        "# Configuration reference\n\n\
         One flat TOML file per experiment; every key below may also be set\n\
         on the command line with `--set key=value`. Defaults in parentheses;\n\
         `(preset)` means the default comes from the named preset key.\n\n\
         | Key | Value | Meaning |\n|---|---|---|\n",
    );
    for row in KEY_REFERENCE {
        let value = row.value.replace('|', "\\|");
        writeln!(out, "| `{}` | {} | {} |", row.key, value, row.doc).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests;
