//! `scat` — one entry point wiring the experiment library into reproducible
//! command-line runs.
//!
//! Every subcommand reads one flat TOML config (`--config`, with repeatable
//! `--set key=value` overrides and the `SCAT_SEED` environment variable
//! taking precedence over the configured seed list), writes its artifacts
//! under `--run-dir`, and records a manifest describing exactly what ran.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "scat", version, about = "Contrastive adversarial training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every artifact-producing subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Directory all artifacts are written under.
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    /// Flat TOML configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured corpus splits (and synonym resource) as files.
    GenCorpus {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the sub-word tokenizer and word vocabulary on the train split.
    BuildVocab {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one regime across the configured seeds, one checkpoint each.
    ///
    /// Contrastive regimes (scat, scat_random, cl, cl_extra_aug) produce
    /// encoder+projector checkpoints; `supervised` trains the classifier
    /// baseline directly, and `supervised_adv` additionally mixes in labeled
    /// adversarial examples from an attack outcome log (--adversarial).
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        /// scat | scat_random | cl | cl_extra_aug | supervised | supervised_adv
        #[arg(long)]
        regime: String,
        /// Outcome log attacking the train split (regime supervised_adv).
        #[arg(long)]
        adversarial: Option<PathBuf>,
    },
    /// Turn pre-trained checkpoints into classifiers and measure accuracy.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Regime whose checkpoints to evaluate (supervised checkpoints are
        /// already classifiers and are only measured).
        #[arg(long)]
        regime: String,
    },
    /// Attack one victim checkpoint over the chosen split.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        /// Victim classifier checkpoint.
        #[arg(long)]
        victim: PathBuf,
        /// synonym_greedy | mlm_greedy | labelfree (defaults to the config key).
        #[arg(long)]
        attacker: Option<String>,
        /// on | off: drop candidates that are antonyms of the original word.
        #[arg(long)]
        antonym_filtering: Option<String>,
        /// Outcome log (JSONL, resumable). Default: attacks/<attacker>-<victim>.jsonl
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sentence-similarity encoder checkpoint; the victim's own pooled
        /// representation is used when omitted.
        #[arg(long)]
        similarity: Option<PathBuf>,
        /// Masked-LM checkpoint (defaults to <run-dir>/mlm.ckpt).
        #[arg(long)]
        mlm: Option<PathBuf>,
        /// Encoder+projector checkpoint driving label-free generation.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Tokenizer file (defaults to the victim checkpoint's recorded one).
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// Split to attack: test (default) or train.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Render report JSON files as markdown tables.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Report JSON files produced by ablate (or assembled by hand).
        files: Vec<PathBuf>,
        /// Recompute every derived number and fail on drift beyond 0.05.
        #[arg(long)]
        verify: bool,
        /// Write markdown here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full comparison: pretrain, evaluate, and attack the four contrastive
    /// regimes on shared seeds, emitting one comparative report.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the generated configuration key reference (markdown).
    ConfigReference,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus { common } => commands::cmd_gen_corpus(&common),
        Command::BuildVocab { common } => commands::cmd_build_vocab(&common),
        Command::Pretrain {
            common,
            regime,
            adversarial,
        } => commands::cmd_pretrain(&common, &regime, adversarial.as_deref()),
        Command::Eval { common, regime } => commands::cmd_eval(&common, &regime),
        Command::Attack {
            common,
            victim,
            attacker,
            antonym_filtering,
            out,
            similarity,
            mlm,
            generator,
            tokenizer,
            split,
        } => commands::cmd_attack(commands::AttackArgs {
            common: &common,
            victim: &victim,
            attacker: attacker.as_deref(),
            antonym_filtering: antonym_filtering.as_deref(),
            out: out.as_deref(),
            similarity: similarity.as_deref(),
            mlm: mlm.as_deref(),
            generator: generator.as_deref(),
            tokenizer: tokenizer.as_deref(),
            split: &split,
        }),
        Command::Report {
            common,
            files,
            verify,
            out,
        } => commands::cmd_report(&common, &files, verify, out.as_deref()),
        Command::Ablate { common } => commands::cmd_ablate(&common),
        Command::ConfigReference => {
            print!("{}", scat_core::config::reference_page());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            let mut source = std::error::Error::source(&error);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
