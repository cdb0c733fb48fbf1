//! Self-supervised contrastive learning via adversarial training (SCAT) for
//! text classifiers, built around small transformer encoders that run on CPU.
//!
//! The crate covers the full experimental loop:
//!
//! - [`data`]: corpus ingestion, word/sub-word dual tokenization, splits
//! - [`augment`]: random-token and synonym-substitution augmentation views
//! - [`model`]: encoder, projection head, classifier head, masked LM provider
//! - [`objective`]: contrastive losses (pairwise, three-sample, regularized)
//! - [`advgen`]: label-free adversarial example generation
//! - [`train`]: pre-training regimes, supervised baselines, multi-seed runs
//! - [`eval`]: linear / fine-tune evaluation, robustness metrics, aggregation
//! - [`attack`]: greedy word-substitution attackers and campaign runner
//! - [`report`]: markdown report rendering and verification
//!
//! Everything is deterministic given the configured seeds: RNG streams are
//! derived by name (see [`rng`]), and batch-level parallelism reduces in a
//! fixed order so results do not depend on thread count.

pub mod advgen;
pub mod attack;
pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod objective;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod synonyms;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
