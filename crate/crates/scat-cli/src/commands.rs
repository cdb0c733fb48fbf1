//! Subcommand implementations.
//!
//! Conventions shared by every command:
//!
//! - artifacts live under `--run-dir`; checkpoints are named
//!   `<regime>-<seed>.ckpt` (classifier checkpoints from evaluation add a
//!   `.classifier.ckpt` suffix), the tokenizer and vocabulary sit at the run
//!   directory root, and the masked LM at `mlm.ckpt`;
//! - checkpoints record their tokenizer file relative to their own
//!   directory, so commands taking a bare `--victim` path find it again;
//! - each command writes `manifest-<command>.json` describing config,
//!   seeds, artifact paths, weight hashes, and timings.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use scat_core::attack::{
    read_outcome_log, run_campaign, AttackerKind, AttackerSetup, SimilarityEncoder,
};
use scat_core::config::ExperimentConfig;
use scat_core::data::{
    tokenize_text, DatasetSplits, LabeledExample, SubwordTokenizer, Vocabulary,
};
use scat_core::error::{Error, Result};
use scat_core::eval::{
    aggregate_seeds, finetune_evaluate, linear_evaluate, EvalConfig, EvalMode, EvalRun,
};
use scat_core::manifest::ExperimentManifest;
use scat_core::model::{weight_hash, MlmModel, ScatModel, TextClassifier};
use scat_core::report::{
    load_report, render_markdown, save_report, verify, AttackerBlock, ComparativeReport,
    ReportRow,
};
use scat_core::synonyms::SynonymResource;
use scat_core::train::{
    pretrain, train_mlm, train_supervised_adv, PretrainResources, Regime, TrainConfig,
};
use scat_core::{parallel, toy};

use crate::CommonArgs;

/// Seed of the shared sentence-similarity encoder `ablate` gives every
/// attack: a fixed, victim-independent stand-in for an external
/// sentence-encoder service, so all models face the same filter.
const SIMILARITY_SEED: u64 = 97;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

struct Workspace {
    config: ExperimentConfig,
    seeds: Vec<u64>,
    run_dir: PathBuf,
    manifest: ExperimentManifest,
}

fn open(common: &CommonArgs, command: &str) -> Result<Workspace> {
    let config = match &common.config {
        Some(path) => ExperimentConfig::load(path, &common.set)?,
        None => ExperimentConfig::parse("", &common.set)?,
    };
    let seeds = config.effective_seeds(std::env::var("SCAT_SEED").ok().as_deref())?;
    std::fs::create_dir_all(&common.run_dir).map_err(|e| Error::io(&common.run_dir, e))?;
    let manifest = ExperimentManifest::new(command, &config, &seeds, &common.set);
    Ok(Workspace {
        config,
        seeds,
        run_dir: common.run_dir.clone(),
        manifest,
    })
}

impl Workspace {
    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.run_dir.join(name)
    }

    /// Write the manifest; call last so it only records existing artifacts.
    fn finish(self) -> Result<()> {
        let path = self.path(format!("manifest-{}.json", self.manifest.command));
        self.manifest.save(&path)
    }
}

fn parse_regime(name: &str) -> Result<Regime> {
    match name {
        "scat" => Ok(Regime::Scat),
        "scat_random" => Ok(Regime::ScatRandom),
        "cl" => Ok(Regime::Cl),
        "cl_extra_aug" => Ok(Regime::ClExtraAug),
        "supervised" => Ok(Regime::Supervised),
        "supervised_adv" => Ok(Regime::SupervisedAdv),
        other => Err(Error::Config(format!(
            "unknown regime '{other}'; expected scat, scat_random, cl, cl_extra_aug, \
             supervised, or supervised_adv"
        ))),
    }
}

fn regime_slug(regime: Regime) -> &'static str {
    match regime {
        Regime::Scat => "scat",
        Regime::ScatRandom => "scat_random",
        Regime::Cl => "cl",
        Regime::ClExtraAug => "cl_extra_aug",
        Regime::Supervised => "supervised",
        Regime::SupervisedAdv => "supervised_adv",
    }
}

fn parse_attacker(name: &str) -> Result<AttackerKind> {
    match name {
        "synonym_greedy" => Ok(AttackerKind::SynonymGreedy),
        "mlm_greedy" => Ok(AttackerKind::MlmGreedy),
        "labelfree" => Ok(AttackerKind::Labelfree),
        other => Err(Error::Config(format!(
            "unknown attacker '{other}'; expected synonym_greedy, mlm_greedy, or labelfree"
        ))),
    }
}

fn attacker_slug(kind: AttackerKind) -> &'static str {
    match kind {
        AttackerKind::SynonymGreedy => "synonym_greedy",
        AttackerKind::MlmGreedy => "mlm_greedy",
        AttackerKind::Labelfree => "labelfree",
    }
}

fn parse_on_off(value: &str) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!(
            "expected 'on' or 'off', got '{other}'"
        ))),
    }
}

/// Load the tokenizer + vocabulary from the run directory, building and
/// saving them from the train split on first use.
fn ensure_tokenizer(
    ws: &mut Workspace,
    splits: &DatasetSplits,
) -> Result<(SubwordTokenizer, Vocabulary)> {
    let tokenizer_path = ws.path("tokenizer.json");
    let vocab_path = ws.path("vocab.json");
    let pair = if tokenizer_path.exists() && vocab_path.exists() {
        (
            SubwordTokenizer::load(&tokenizer_path)?,
            Vocabulary::load(&vocab_path)?,
        )
    } else {
        let started = Instant::now();
        let tokenizer = SubwordTokenizer::train(&splits.train, ws.config.subword_vocab_size)?;
        let vocab = Vocabulary::build(&splits.train, ws.config.vocab_min_count)?;
        tokenizer.save(&tokenizer_path)?;
        vocab.save(&vocab_path)?;
        ws.manifest.record_timing("build_vocab", started);
        (tokenizer, vocab)
    };
    ws.manifest.record_artifact("tokenizer", &tokenizer_path);
    ws.manifest.record_artifact("vocab", &vocab_path);
    Ok(pair)
}

/// Load `mlm.ckpt` from the run directory, training and saving it on first
/// use.
fn ensure_mlm(
    ws: &mut Workspace,
    tokenizer: &SubwordTokenizer,
    splits: &DatasetSplits,
) -> Result<MlmModel> {
    let path = ws.path("mlm.ckpt");
    let model = if path.exists() {
        MlmModel::load(&path)?.0
    } else {
        let started = Instant::now();
        let encoder = ws.config.encoder_config(tokenizer.vocab_size());
        let run = train_mlm(
            &splits.train,
            tokenizer,
            &encoder,
            &ws.config.mlm_train_config(),
        )?;
        run.model.save(&path, "tokenizer.json")?;
        ws.manifest.record_timing("train_mlm", started);
        run.model
    };
    ws.manifest.record_artifact("mlm", &path);
    ws.manifest.record_hash("mlm", weight_hash(&model.store));
    Ok(model)
}

/// Percent accuracy of a frozen classifier over a split.
fn accuracy(
    victim: &TextClassifier,
    examples: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Eval("accuracy needs at least one example".into()));
    }
    let max_len = victim.encoder.config.max_len;
    let correct = parallel::map_slice(examples, |example| -> Result<bool> {
        let tokens = tokenize_text(&example.text, Some(example.label), tokenizer, max_len);
        Ok(victim.predict(&tokens.subwords)?.0 == example.label)
    });
    let mut hits = 0usize;
    for flag in correct {
        hits += flag? as usize;
    }
    Ok(100.0 * hits as f64 / examples.len() as f64)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// gen-corpus / build-vocab
// ---------------------------------------------------------------------------

pub fn cmd_gen_corpus(common: &CommonArgs) -> Result<()> {
    let mut ws = open(common, "gen-corpus")?;
    let started = Instant::now();
    let splits = ws.config.load_splits()?;
    let dir = ws.path("corpus");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (name, examples) in [
        ("train", &splits.train),
        ("val", &splits.validation),
        ("test", &splits.test),
    ] {
        let path = dir.join(format!("{name}.jsonl"));
        toy::write_corpus_jsonl(&path, examples)?;
        ws.manifest.record_artifact(format!("corpus_{name}"), &path);
    }
    let synonyms_path = dir.join("synonyms.json");
    ws.config.load_synonyms()?.save(&synonyms_path)?;
    ws.manifest.record_artifact("synonyms", &synonyms_path);
    ws.manifest.record_timing("gen_corpus", started);
    println!(
        "corpus: {} train / {} validation / {} test examples under {}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        dir.display()
    );
    ws.finish()
}

pub fn cmd_build_vocab(common: &CommonArgs) -> Result<()> {
    let mut ws = open(common, "build-vocab")?;
    let started = Instant::now();
    let splits = ws.config.load_splits()?;
    let tokenizer = SubwordTokenizer::train(&splits.train, ws.config.subword_vocab_size)?;
    let vocab = Vocabulary::build(&splits.train, ws.config.vocab_min_count)?;
    let tokenizer_path = ws.path("tokenizer.json");
    let vocab_path = ws.path("vocab.json");
    tokenizer.save(&tokenizer_path)?;
    vocab.save(&vocab_path)?;
    ws.manifest.record_artifact("tokenizer", &tokenizer_path);
    ws.manifest.record_artifact("vocab", &vocab_path);
    ws.manifest.record_timing("build_vocab", started);
    println!(
        "tokenizer: {} sub-words; vocabulary: {} words",
        tokenizer.vocab_size(),
        vocab.tokens().len()
    );
    ws.finish()
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

/// Successful outcomes of an attack on the train split, as labeled examples.
fn adversarial_from_log(path: &Path, train: &[LabeledExample]) -> Result<Vec<LabeledExample>> {
    let outcomes = read_outcome_log(path)?;
    outcomes
        .iter()
        .filter(|outcome| outcome.success)
        .map(|outcome| {
            let source = train.get(outcome.example_id).ok_or_else(|| {
                Error::Attack(format!(
                    "outcome {} is outside the train split ({} examples); build the log by \
                     attacking the train split (scat attack --split train)",
                    outcome.example_id,
                    train.len()
                ))
            })?;
            Ok(LabeledExample {
                text: outcome.perturbed_text(),
                label: source.label,
            })
        })
        .collect()
}

pub fn cmd_pretrain(common: &CommonArgs, regime_name: &str, adversarial: Option<&Path>) -> Result<()> {
    let regime = parse_regime(regime_name)?;
    let mut ws = open(common, "pretrain")?;
    let splits = ws.config.load_splits()?;
    let (tokenizer, vocab) = ensure_tokenizer(&mut ws, &splits)?;
    let synonyms = ws.config.load_synonyms()?;
    let encoder = ws.config.encoder_config(tokenizer.vocab_size());
    let base = ws.config.train_config(regime);
    let seeds = ws.seeds.clone();

    if adversarial.is_some() && regime != Regime::SupervisedAdv {
        return Err(Error::Config(
            "--adversarial only applies to regime supervised_adv".into(),
        ));
    }

    if regime.is_contrastive() {
        let mlm = if regime.is_adversarial() {
            Some(ensure_mlm(&mut ws, &tokenizer, &splits)?)
        } else {
            None
        };
        let resources = PretrainResources {
            tokenizer: &tokenizer,
            vocab: &vocab,
            synonyms: Some(&synonyms),
            mlm: mlm.as_ref().map(|m| m as _),
        };
        let projector = ws.config.projector_config();
        for &seed in &seeds {
            let started = Instant::now();
            let run = pretrain(
                &splits.train,
                &resources,
                &encoder,
                &projector,
                &TrainConfig { seed, ..base },
            )?;
            let name = format!("{}-{seed}", regime_slug(regime));
            save_run(&mut ws, &name, started, &run.state, |path| {
                run.model.save(path, "tokenizer.json")
            })?;
            ws.manifest.record_hash(&name, weight_hash(&run.model.store));
        }
    } else {
        let expansion = match (regime, adversarial) {
            (Regime::SupervisedAdv, Some(path)) => adversarial_from_log(path, &splits.train)?,
            (Regime::SupervisedAdv, None) => {
                return Err(Error::Config(
                    "regime supervised_adv needs --adversarial <outcomes.jsonl>".into(),
                ))
            }
            _ => Vec::new(),
        };
        if regime == Regime::SupervisedAdv {
            println!("adversarial expansion: {} examples", expansion.len());
        }
        let num_classes = ws.config.num_classes();
        for &seed in &seeds {
            let started = Instant::now();
            let run = train_supervised_adv(
                &splits.train,
                &expansion,
                &tokenizer,
                &encoder,
                num_classes,
                &TrainConfig { seed, ..base },
            )?;
            let name = format!("{}-{seed}", regime_slug(regime));
            save_run(&mut ws, &name, started, &run.state, |path| {
                run.model.save(path, "tokenizer.json")
            })?;
            ws.manifest.record_hash(&name, weight_hash(&run.model.store));
        }
    }
    ws.finish()
}

/// Save one training run's checkpoint + step log and record both.
fn save_run(
    ws: &mut Workspace,
    name: &str,
    started: Instant,
    state: &scat_core::train::TrainState,
    save_model: impl FnOnce(&Path) -> Result<()>,
) -> Result<()> {
    let checkpoint = ws.path(format!("{name}.ckpt"));
    save_model(&checkpoint)?;
    let steps_path = ws.path(format!("{name}.steps.jsonl"));
    let mut file = std::fs::File::create(&steps_path).map_err(|e| Error::io(&steps_path, e))?;
    state.write_jsonl(&mut file)?;
    file.flush().map_err(|e| Error::io(&steps_path, e))?;
    ws.manifest
        .record_artifact(format!("checkpoint_{name}"), &checkpoint);
    ws.manifest.record_artifact(format!("steps_{name}"), &steps_path);
    ws.manifest.record_timing(name, started);
    println!("{name}: {} optimizer steps -> {}", state.steps(), checkpoint.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct SeedEval {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_accuracy: Option<f64>,
    test_accuracy: f64,
    checkpoint: PathBuf,
}

pub fn cmd_eval(common: &CommonArgs, regime_name: &str) -> Result<()> {
    let regime = parse_regime(regime_name)?;
    let mut ws = open(common, "eval")?;
    let splits = ws.config.load_splits()?;
    let (tokenizer, _) = ensure_tokenizer(&mut ws, &splits)?;
    let num_classes = ws.config.num_classes();
    let eval_base = ws.config.eval_config();
    let slug = regime_slug(regime);
    let seeds = ws.seeds.clone();

    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let started = Instant::now();
        let name = format!("{slug}-{seed}");
        let checkpoint = ws.path(format!("{name}.ckpt"));
        let entry = if regime.is_contrastive() {
            let (model, _) = ScatModel::load(&checkpoint)?;
            let config = EvalConfig { seed, ..eval_base };
            let run: EvalRun = match config.mode {
                EvalMode::Linear => linear_evaluate(
                    &model,
                    &splits.train,
                    &splits.validation,
                    &tokenizer,
                    num_classes,
                    &config,
                )?,
                EvalMode::Finetune => finetune_evaluate(
                    &model,
                    &splits.train,
                    &splits.validation,
                    &tokenizer,
                    num_classes,
                    &config,
                )?,
            };
            let classifier_path = ws.path(format!("{name}.classifier.ckpt"));
            run.classifier.save(&classifier_path, "tokenizer.json")?;
            ws.manifest
                .record_artifact(format!("classifier_{name}"), &classifier_path);
            ws.manifest
                .record_hash(format!("classifier_{name}"), weight_hash(&run.classifier.store));
            let frozen = run.classifier.freeze();
            SeedEval {
                seed,
                val_accuracy: Some(run.best_val_accuracy),
                test_accuracy: accuracy(&frozen, &splits.test, &tokenizer)?,
                checkpoint: classifier_path,
            }
        } else {
            // Supervised checkpoints are classifiers already; just measure.
            let (frozen, _) = TextClassifier::load(&checkpoint)?;
            SeedEval {
                seed,
                val_accuracy: None,
                test_accuracy: accuracy(&frozen, &splits.test, &tokenizer)?,
                checkpoint,
            }
        };
        ws.manifest.record_timing(&name, started);
        println!(
            "{name}: test accuracy {:.1}{}",
            entry.test_accuracy,
            entry
                .val_accuracy
                .map(|v| format!(" (best validation {v:.1})"))
                .unwrap_or_default()
        );
        per_seed.push(entry);
    }

    let mean = per_seed.iter().map(|e| e.test_accuracy).sum::<f64>() / per_seed.len() as f64;
    let summary = serde_json::json!({
        "regime": slug,
        "mode": match eval_base.mode { EvalMode::Linear => "linear", EvalMode::Finetune => "finetune" },
        "per_seed": per_seed,
        "mean_test_accuracy": mean,
    });
    let summary_path = ws.path(format!("eval-{slug}.json"));
    write_json(&summary_path, &summary)?;
    ws.manifest.record_artifact("summary", &summary_path);
    println!("{slug}: mean test accuracy {mean:.1} over {} seeds", per_seed.len());
    ws.finish()
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

pub struct AttackArgs<'a> {
    pub common: &'a CommonArgs,
    pub victim: &'a Path,
    pub attacker: Option<&'a str>,
    pub antonym_filtering: Option<&'a str>,
    pub out: Option<&'a Path>,
    pub similarity: Option<&'a Path>,
    pub mlm: Option<&'a Path>,
    pub generator: Option<&'a Path>,
    pub tokenizer: Option<&'a Path>,
    pub split: &'a str,
}

pub fn cmd_attack(args: AttackArgs<'_>) -> Result<()> {
    let mut ws = open(args.common, "attack")?;
    let mut attack_config = ws.config.attack_config();
    if let Some(name) = args.attacker {
        attack_config.attacker = parse_attacker(name)?;
    }
    if let Some(value) = args.antonym_filtering {
        attack_config.antonym_filtering = parse_on_off(value)?;
    }

    let splits = ws.config.load_splits()?;
    let examples = match args.split {
        "test" => &splits.test,
        "train" => &splits.train,
        other => {
            return Err(Error::Config(format!(
                "unknown split '{other}'; expected test or train"
            )))
        }
    };

    let (victim, tokenizer_ref) = TextClassifier::load(args.victim)?;
    let tokenizer_path = match args.tokenizer {
        Some(path) => path.to_path_buf(),
        None => args
            .victim
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&tokenizer_ref),
    };
    if !tokenizer_path.exists() {
        return Err(Error::Config(format!(
            "tokenizer not found at {}; pass --tokenizer",
            tokenizer_path.display()
        )));
    }
    let tokenizer = SubwordTokenizer::load(&tokenizer_path)?;
    let synonyms: SynonymResource = ws.config.load_synonyms()?;

    let similarity_model = match args.similarity {
        Some(path) => Some(ScatModel::load(path)?.0),
        None => None,
    };
    let similarity: &dyn SimilarityEncoder = match &similarity_model {
        Some(model) => model,
        None => &victim,
    };

    let needs_mlm = matches!(
        attack_config.attacker,
        AttackerKind::MlmGreedy | AttackerKind::Labelfree
    );
    let mlm_model = if needs_mlm {
        let path = args
            .mlm
            .map(Path::to_path_buf)
            .unwrap_or_else(|| ws.path("mlm.ckpt"));
        if !path.exists() {
            return Err(Error::Config(format!(
                "masked-LM checkpoint not found at {}; train one (e.g. scat pretrain \
                 --regime scat) or pass --mlm",
                path.display()
            )));
        }
        ws.manifest.record_artifact("mlm", &path);
        Some(MlmModel::load(&path)?.0)
    } else {
        None
    };

    let generator_model = match (attack_config.attacker, args.generator) {
        (AttackerKind::Labelfree, Some(path)) => Some(ScatModel::load(path)?.0),
        (AttackerKind::Labelfree, None) => {
            return Err(Error::Config(
                "the labelfree attacker needs --generator <encoder checkpoint>".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(Error::Config(
                "--generator only applies to the labelfree attacker".into(),
            ))
        }
        _ => None,
    };

    let setup = match attack_config.attacker {
        AttackerKind::SynonymGreedy => AttackerSetup::SynonymGreedy {
            similarity,
            synonyms: &synonyms,
        },
        AttackerKind::MlmGreedy => AttackerSetup::MlmGreedy {
            similarity,
            mlm: mlm_model.as_ref().expect("loaded above"),
            synonyms: &synonyms,
        },
        AttackerKind::Labelfree => AttackerSetup::Labelfree {
            scat: generator_model.as_ref().expect("loaded above"),
            mlm: mlm_model.as_ref().expect("loaded above"),
            synonyms: &synonyms,
            temperature: ws.config.temperature,
            advgen: ws.config.advgen_config(),
        },
    };

    let out = match args.out {
        Some(path) => path.to_path_buf(),
        None => {
            let stem = args
                .victim
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "victim".into());
            ws.path(format!(
                "attacks/{}-{stem}.jsonl",
                attacker_slug(attack_config.attacker)
            ))
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }

    let started = Instant::now();
    let result = run_campaign(
        examples,
        &victim,
        &setup,
        &tokenizer,
        &attack_config,
        Some(&out),
    )?;
    ws.manifest.record_timing("attack", started);

    let metrics_path = out.with_extension("metrics.json");
    write_json(&metrics_path, &result.metrics)?;
    ws.manifest.record_artifact("outcomes", &out);
    ws.manifest.record_artifact("metrics", &metrics_path);
    ws.manifest.record_artifact("victim", args.victim);

    let successes = result.outcomes.iter().filter(|o| o.success).count();
    println!(
        "examples={} successes={} acc={:.1} atk_acc={:.1} afr={:.1}",
        examples.len(),
        successes,
        result.metrics.acc,
        result.metrics.atk_acc,
        result.metrics.afr
    );
    ws.finish()
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(
    common: &CommonArgs,
    files: &[PathBuf],
    verify_requested: bool,
    out: Option<&Path>,
) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config(
            "report needs at least one report JSON file".into(),
        ));
    }
    let mut ws = open(common, "report")?;
    let started = Instant::now();
    let mut rendered = String::new();
    for (index, path) in files.iter().enumerate() {
        let report = load_report(path)?;
        if verify_requested {
            match verify(&report) {
                Ok(()) => eprintln!("verified {}", path.display()),
                Err(Error::Report(message)) => {
                    return Err(Error::Report(format!("{}: {message}", path.display())))
                }
                Err(other) => return Err(other),
            }
        }
        if !rendered.is_empty() {
            rendered.push('\n');
        }
        rendered.push_str(&render_markdown(&report));
        ws.manifest.record_artifact(format!("input_{index}"), path);
    }
    if let Some(path) = out {
        std::fs::write(path, &rendered).map_err(|e| Error::io(path, e))?;
        ws.manifest.record_artifact("markdown", path);
    } else {
        print!("{rendered}");
    }
    ws.manifest.record_timing("report", started);
    ws.finish()
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// The four-way comparison: each contrastive regime is pre-trained,
/// linearly evaluated, and attacked on the same seeds, corpus, masked LM,
/// and sentence-similarity encoder; one comparative report comes out.
pub fn cmd_ablate(common: &CommonArgs) -> Result<()> {
    let mut ws = open(common, "ablate")?;
    let splits = ws.config.load_splits()?;
    let (tokenizer, vocab) = ensure_tokenizer(&mut ws, &splits)?;
    let synonyms = ws.config.load_synonyms()?;
    let num_classes = ws.config.num_classes();
    let mlm = ensure_mlm(&mut ws, &tokenizer, &splits)?;
    let encoder = ws.config.encoder_config(tokenizer.vocab_size());
    let projector = ws.config.projector_config();
    let eval_base = ws.config.eval_config();
    let seeds = ws.seeds.clone();
    let similarity = ScatModel::new(&encoder, &projector, SIMILARITY_SEED)?;

    let attacks_dir = ws.path("attacks");
    std::fs::create_dir_all(&attacks_dir).map_err(|e| Error::io(&attacks_dir, e))?;

    let mut rows = Vec::new();
    for regime in [Regime::Cl, Regime::ClExtraAug, Regime::ScatRandom, Regime::Scat] {
        let slug = regime_slug(regime);
        let base = ws.config.train_config(regime);
        let mut triples = Vec::new();
        for &seed in &seeds {
            let name = format!("{slug}-{seed}");
            let started = Instant::now();

            let resources = PretrainResources {
                tokenizer: &tokenizer,
                vocab: &vocab,
                synonyms: Some(&synonyms),
                mlm: Some(&mlm),
            };
            let run = pretrain(
                &splits.train,
                &resources,
                &encoder,
                &projector,
                &TrainConfig { seed, ..base },
            )?;
            let checkpoint = ws.path(format!("{name}.ckpt"));
            run.model.save(&checkpoint, "tokenizer.json")?;
            ws.manifest
                .record_artifact(format!("checkpoint_{name}"), &checkpoint);
            ws.manifest.record_hash(&name, weight_hash(&run.model.store));

            let eval_config = EvalConfig { seed, ..eval_base };
            let eval_run = match eval_config.mode {
                EvalMode::Linear => linear_evaluate(
                    &run.model,
                    &splits.train,
                    &splits.validation,
                    &tokenizer,
                    num_classes,
                    &eval_config,
                )?,
                EvalMode::Finetune => finetune_evaluate(
                    &run.model,
                    &splits.train,
                    &splits.validation,
                    &tokenizer,
                    num_classes,
                    &eval_config,
                )?,
            };
            let classifier_path = ws.path(format!("{name}.classifier.ckpt"));
            eval_run.classifier.save(&classifier_path, "tokenizer.json")?;
            ws.manifest
                .record_artifact(format!("classifier_{name}"), &classifier_path);
            let victim = eval_run.classifier.freeze();

            let mut attack_config = ws.config.attack_config();
            attack_config.rng_seed = seed;
            let setup = match attack_config.attacker {
                AttackerKind::SynonymGreedy => AttackerSetup::SynonymGreedy {
                    similarity: &similarity,
                    synonyms: &synonyms,
                },
                AttackerKind::MlmGreedy => AttackerSetup::MlmGreedy {
                    similarity: &similarity,
                    mlm: &mlm,
                    synonyms: &synonyms,
                },
                AttackerKind::Labelfree => AttackerSetup::Labelfree {
                    scat: &run.model,
                    mlm: &mlm,
                    synonyms: &synonyms,
                    temperature: ws.config.temperature,
                    advgen: ws.config.advgen_config(),
                },
            };
            let log = attacks_dir.join(format!("{name}.jsonl"));
            let result = run_campaign(
                &splits.test,
                &victim,
                &setup,
                &tokenizer,
                &attack_config,
                Some(&log),
            )?;
            ws.manifest.record_artifact(format!("outcomes_{name}"), &log);
            ws.manifest.record_timing(&name, started);
            println!(
                "{name}: acc={:.1} atk_acc={:.1} afr={:.1}",
                result.metrics.acc, result.metrics.atk_acc, result.metrics.afr
            );
            triples.push(result.metrics);
        }
        rows.push(ReportRow {
            model: slug.to_string(),
            blocks: vec![AttackerBlock {
                attacker: ws.config.attacker,
                unfiltered: aggregate_seeds(&triples)?,
                filtered: None,
            }],
        });
    }

    let report = ComparativeReport {
        title: "Contrastive regimes under attack".into(),
        seeds: seeds.clone(),
        rows,
    };
    let report_path = ws.path("report.json");
    save_report(&report_path, &report)?;
    let markdown = render_markdown(&report);
    let markdown_path = ws.path("report.md");
    std::fs::write(&markdown_path, &markdown).map_err(|e| Error::io(&markdown_path, e))?;
    ws.manifest.record_artifact("report", &report_path);
    ws.manifest.record_artifact("report_markdown", &markdown_path);
    print!("{markdown}");
    ws.finish()
}
