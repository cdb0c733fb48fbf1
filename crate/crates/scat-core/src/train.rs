//! Training loops: contrastive pre-training in four regimes, supervised
//! baselines (optionally over an adversarially expanded dataset), masked-LM
//! training for the substitution scorer, and multi-seed orchestration.
//!
//! All randomness flows from `TrainConfig::seed` through tagged
//! [`crate::rng::stream`]s (data order, augmentation views, adversarial
//! generation, masking), so runs are bit-reproducible on one machine and the
//! sub-config `rng_seed` fields are overridden for the duration of a run.
//! Per-example work (augmentation, generation, forward/backward graphs) fans
//! out through [`crate::parallel`]; gradients are accumulated in example-index
//! order, which makes parallel and sequential execution bit-identical.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advgen::{adv_stream, generate_adv, generate_adv_random, AdvContext, AdvGenConfig};
use crate::augment::{augment_extra_view, augment_pair, AugmentConfig, AugmentContext};
use crate::data::{special, tokenize_text, LabeledExample, SubwordTokenizer, TokenizedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    ClassifierModel, EncoderConfig, MlmModel, MlmScorer, ProjectorConfig, ScatModel,
};
use crate::objective::{self, loss_cl_graph, loss_final_graph, ObjectiveConfig};
use crate::parallel;
use crate::rng;
use crate::synonyms::SynonymResource;
use crate::tensor::{Graph, Mat, ParamGrads, ParamId, ParamStore};

/// Seeds used for the three-run averages.
pub const DEFAULT_SEEDS: [u64; 3] = [2020, 2010, 2000];

/// Batch sizes the supervised baseline sweeps over.
pub const BATCH_SIZE_SWEEP: [usize; 4] = [16, 32, 64, 128];

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Contrastive pre-training with adversarial third views.
    Scat,
    /// Two-view contrastive baseline.
    Cl,
    /// Three-view contrastive baseline; the third view is another augmentation.
    ClExtraAug,
    /// Ablation: adversarial views with random (ungraded) attack positions.
    ScatRandom,
    /// Supervised classifier on clean examples.
    Supervised,
    /// Supervised classifier on clean plus labeled adversarial examples.
    SupervisedAdv,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Scat,
        Regime::Cl,
        Regime::ClExtraAug,
        Regime::ScatRandom,
        Regime::Supervised,
        Regime::SupervisedAdv,
    ];

    /// Regimes trained with the contrastive objective (pre-training).
    pub fn is_contrastive(self) -> bool {
        !matches!(self, Regime::Supervised | Regime::SupervisedAdv)
    }

    /// Regimes whose third view comes from the adversarial generator.
    pub fn is_adversarial(self) -> bool {
        matches!(self, Regime::Scat | Regime::ScatRandom)
    }

    /// Number of views stacked into the contrastive set (0 for supervised).
    pub fn views(self) -> usize {
        match self {
            Regime::Cl => 2,
            Regime::Scat | Regime::ClExtraAug | Regime::ScatRandom => 3,
            Regime::Supervised | Regime::SupervisedAdv => 0,
        }
    }
}

/// One training run's hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    /// Epochs over which the learning rate ramps linearly from 0 to
    /// `learning_rate`; constant afterwards.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub advgen: AdvGenConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    /// The AG-style preset: 50 epochs, 3 of them warm-up, batch 32, AdamW at
    /// 5e-5 with weight decay 1e-6.
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Scat,
            epochs: 50,
            warmup_epochs: 3,
            batch_size: 32,
            learning_rate: 5e-5,
            weight_decay: 1e-6,
            seed: DEFAULT_SEEDS[0],
            objective: ObjectiveConfig::default(),
            advgen: AdvGenConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// DBPedia-style preset: 10 epochs with a single warm-up epoch.
    pub fn dbpedia(regime: Regime) -> Self {
        TrainConfig {
            regime,
            epochs: 10,
            warmup_epochs: 1,
            ..TrainConfig::default()
        }
    }

    /// Desk-scale preset for the small bundled encoder: short schedules and a
    /// learning rate matched to from-scratch training of a tiny model.
    pub fn desk(regime: Regime) -> Self {
        if regime.is_contrastive() {
            TrainConfig {
                regime,
                epochs: 10,
                warmup_epochs: 1,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            }
        } else {
            TrainConfig {
                regime,
                epochs: 20,
                warmup_epochs: 0,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be < epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        let min_batch = if self.regime.is_contrastive() { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch_size must be ≥ {min_batch} for regime {:?}",
                self.regime
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        self.objective.validate()?;
        if self.regime.is_adversarial() {
            self.advgen.validate()?;
        }
        self.augment.validate()
    }
}

/// One optimizer step's log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    /// The optimized objective value for the step.
    pub loss: f64,
    /// Three-view decomposition, present for 3N contrastive regimes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_cl3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_reg: Option<f64>,
    /// Mean contrastive loss of the generated (adv, view2) pairs, present for
    /// adversarial regimes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_closs_adv: Option<f64>,
}

/// Loss history plus the material needed to cross-check the last step.
#[derive(Debug, Clone, Default)]
pub struct TrainState {
    /// One record per completed optimizer step.
    pub records: Vec<StepRecord>,
    /// Projection stack of the most recent contrastive step (rows: view-1
    /// block, view-2 block, then the third-view block when present), kept so
    /// logged losses can be recomputed from raw projections.
    pub last_projections: Option<Mat>,
}

impl TrainState {
    pub fn steps(&self) -> u64 {
        self.records.len() as u64
    }

    /// Write the history as JSON lines, one step per line.
    pub fn write_jsonl(&self, out: &mut dyn Write) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")
                .map_err(|e| Error::io("<step log>", e))?;
        }
        Ok(())
    }
}

/// Learning rate at a 1-based step index: linear ramp over the warm-up steps,
/// constant afterwards.
pub fn learning_rate_at(step: u64, warmup_steps: u64, base_lr: f64) -> f64 {
    if warmup_steps == 0 || step > warmup_steps {
        base_lr
    } else {
        base_lr * step as f64 / warmup_steps as f64
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: BTreeMap<ParamId, Mat>,
    v: BTreeMap<ParamId, Mat>,
    t: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Apply one update. Decay is decoupled from the gradient: every updated
    /// parameter shrinks by `lr · weight_decay · θ` in addition to the
    /// moment-estimate step.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (&id, grad) in &grads.0 {
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| Mat::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| Mat::zeros(grad.raw_dim()));
            ndarray::Zip::from(&mut *m).and(grad).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let theta = store.get_mut(id);
            ndarray::Zip::from(&mut *theta)
                .and(&*m)
                .and(&*v)
                .for_each(|t, &m, &v| {
                    let update = (m / bc1) / ((v / bc2).sqrt() + self.eps);
                    *t -= lr * (update + self.weight_decay * *t);
                });
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

pub(crate) fn collect_results<T>(items: Vec<Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}

/// Example visit order for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "order", &[epoch]));
    order
}

/// Split an epoch's order into optimizer batches. A trailing partial batch is
/// kept only when it meets the regime's minimum size (2 for contrastive, so a
/// leftover singleton, which has no in-batch negatives, is dropped).
pub(crate) fn plan_batches(order: &[usize], batch_size: usize, min_size: usize) -> Vec<Vec<usize>> {
    order
        .chunks(batch_size)
        .filter(|chunk| chunk.len() >= min_size)
        .map(|chunk| chunk.to_vec())
        .collect()
}

/// Number of optimizer steps one epoch contributes.
pub fn steps_per_epoch(n_examples: usize, batch_size: usize, contrastive: bool) -> usize {
    let min_size = if contrastive { 2 } else { 1 };
    let full = n_examples / batch_size;
    let rest = n_examples % batch_size;
    full + usize::from(rest >= min_size)
}

fn batch_dump(batch: &[usize], tokenized: &[TokenizedExample]) -> String {
    batch
        .iter()
        .map(|&i| format!("#{i} \"{}\"", tokenized[i].words.join(" ")))
        .collect::<Vec<_>>()
        .join("; ")
}

fn check_finite_loss(
    loss: f64,
    step: u64,
    epoch: u64,
    batch: &[usize],
    tokenized: &[TokenizedExample],
) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    Err(Error::Diverged {
        step: step as usize,
        message: format!(
            "non-finite loss {loss} at epoch {epoch}; offending batch: {}",
            batch_dump(batch, tokenized)
        ),
    })
}

fn check_finite_grads(
    grads: &ParamGrads,
    step: u64,
    epoch: u64,
    batch: &[usize],
    tokenized: &[TokenizedExample],
) -> Result<()> {
    let norm = grads.global_norm();
    if norm.is_finite() {
        return Ok(());
    }
    Err(Error::Diverged {
        step: step as usize,
        message: format!(
            "non-finite gradient norm at epoch {epoch}; offending batch: {}",
            batch_dump(batch, tokenized)
        ),
    })
}

pub(crate) fn tokenize_dataset(
    dataset: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    max_len: usize,
) -> Vec<TokenizedExample> {
    parallel::map_slice(dataset, |ex| {
        tokenize_text(&ex.text, Some(ex.label), tokenizer, max_len)
    })
}

// ---------------------------------------------------------------------------
// Contrastive pre-training
// ---------------------------------------------------------------------------

/// Read-only services a pre-training run draws on. `synonyms` feeds both
/// synonym augmentation and the generator's antonym filter; `mlm` supplies
/// substitution candidates and is required for adversarial regimes.
pub struct PretrainResources<'a> {
    pub tokenizer: &'a SubwordTokenizer,
    pub vocab: &'a Vocabulary,
    pub synonyms: Option<&'a SynonymResource>,
    pub mlm: Option<&'a dyn MlmScorer>,
}

/// A finished pre-training run.
pub struct PretrainRun {
    pub model: ScatModel,
    pub state: TrainState,
}

/// Pre-train an encoder + projector under a contrastive regime.
pub fn pretrain(
    dataset: &[LabeledExample],
    resources: &PretrainResources,
    encoder: &EncoderConfig,
    projector: &ProjectorConfig,
    config: &TrainConfig,
) -> Result<PretrainRun> {
    config.validate()?;
    if !config.regime.is_contrastive() {
        return Err(Error::Config(format!(
            "pretrain expects a contrastive regime, got {:?}",
            config.regime
        )));
    }
    if config.regime.is_adversarial() && resources.mlm.is_none() {
        return Err(Error::Config(
            "adversarial regimes need a masked-LM scorer for substitution candidates".into(),
        ));
    }
    if dataset.len() < 2 {
        return Err(Error::Config(
            "contrastive pre-training needs at least 2 examples".into(),
        ));
    }

    let tokenized = tokenize_dataset(dataset, resources.tokenizer, encoder.max_len);
    if let Some(empty) = tokenized.iter().position(|t| t.words.is_empty()) {
        return Err(Error::Config(format!(
            "example {empty} has no words after tokenization"
        )));
    }

    let mut model = ScatModel::new(encoder, projector, config.seed)?;
    let mut optimizer = AdamW::new(config.weight_decay);
    let mut state = TrainState::default();
    // All view draws follow the run seed, regardless of what the sub-config
    // carried.
    let augment_cfg = AugmentConfig {
        rng_seed: config.seed,
        ..config.augment
    };

    let per_epoch = steps_per_epoch(dataset.len(), config.batch_size, true) as u64;
    let warmup_steps = config.warmup_epochs as u64 * per_epoch;
    let mut step: u64 = 0;
    for epoch in 0..config.epochs as u64 {
        let order = epoch_order(dataset.len(), config.seed, epoch);
        for batch in plan_batches(&order, config.batch_size, 2) {
            step += 1;
            let lr = learning_rate_at(step, warmup_steps, config.learning_rate);
            let (record, stacked, grads) = pretrain_step(
                &model,
                &batch,
                &tokenized,
                resources,
                config,
                &augment_cfg,
                epoch,
                step,
                lr,
            )?;
            optimizer.step(&mut model.store, &grads, lr);
            state.records.push(record);
            state.last_projections = Some(stacked);
        }
    }
    Ok(PretrainRun { model, state })
}

/// One contrastive step: augment, build the view set, differentiate the joint
/// loss, and return the accumulated gradients (the caller applies them).
#[allow(clippy::too_many_arguments)]
fn pretrain_step(
    model: &ScatModel,
    batch: &[usize],
    tokenized: &[TokenizedExample],
    resources: &PretrainResources,
    config: &TrainConfig,
    augment_cfg: &AugmentConfig,
    epoch: u64,
    step: u64,
    lr: f64,
) -> Result<(StepRecord, Mat, ParamGrads)> {
    let n = batch.len();
    let max_len = model.encoder.config.max_len;
    let actx = AugmentContext {
        vocab: resources.vocab,
        synonyms: resources.synonyms,
        tokenizer: resources.tokenizer,
        max_len,
    };

    let pairs = collect_results(parallel::map_slice(batch, |&i| {
        augment_pair(&tokenized[i], actx, augment_cfg, i as u64, epoch)
    }))?;

    // The third view: a fresh augmentation, or a generated adversary scored
    // against the rest of the batch.
    let no_synonyms = SynonymResource::new();
    let (thirds, mean_closs_adv) = match config.regime {
        Regime::Cl => (None, None),
        Regime::Supervised | Regime::SupervisedAdv => {
            unreachable!("pretrain rejects supervised regimes")
        }
        Regime::ClExtraAug => {
            let views = collect_results(parallel::map_slice(batch, |&i| {
                augment_extra_view(&tokenized[i], actx, augment_cfg, i as u64, epoch)
                    .map(|(view, _)| view)
            }))?;
            (Some(views), None)
        }
        Regime::Scat | Regime::ScatRandom => {
            let projections = collect_results(parallel::map_slice(&pairs, |pair| {
                Ok((
                    model.project(&pair.view1.subwords)?,
                    model.project(&pair.view2.subwords)?,
                ))
            }))?;
            let mlm = resources.mlm.expect("validated in pretrain");
            let synonyms = resources.synonyms.unwrap_or(&no_synonyms);
            let slots: Vec<usize> = (0..n).collect();
            let advs = collect_results(parallel::map_slice(&slots, |&j| {
                let negatives: Vec<(Array1<f64>, Array1<f64>)> = projections
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, p)| p.clone())
                    .collect();
                let ctx = AdvContext {
                    model,
                    mlm,
                    tokenizer: resources.tokenizer,
                    synonyms,
                    temperature: config.objective.temperature,
                    max_len,
                    negatives: &negatives,
                };
                let mut gen_rng = adv_stream(config.seed, batch[j] as u64, epoch);
                match config.regime {
                    Regime::Scat => generate_adv(&pairs[j], &ctx, &config.advgen, &mut gen_rng),
                    _ => generate_adv_random(&pairs[j], &ctx, &config.advgen, &mut gen_rng),
                }
            }))?;
            let mean = advs.iter().map(|a| a.closs_adv).sum::<f64>() / n as f64;
            let views = advs.into_iter().map(|a| a.tokenized).collect();
            (Some(views), Some(mean))
        }
    };

    // Per-example graphs over all views, then one joint loss graph over the
    // stacked projections. Splitting the backward pass this way keeps each
    // graph private to one worker while the joint loss stays a single
    // arithmetic expression.
    let store = &model.store;
    let slots: Vec<usize> = (0..n).collect();
    let built = collect_results(parallel::map_slice(&slots, |&j| {
        let mut g = Graph::new(store);
        let (_, z1) = model.project_graph(&mut g, &pairs[j].view1.subwords)?;
        let (_, z2) = model.project_graph(&mut g, &pairs[j].view2.subwords)?;
        let z = match &thirds {
            Some(views) => {
                let (_, z3) = model.project_graph(&mut g, &views[j].subwords)?;
                g.concat_rows(vec![z1, z2, z3])
            }
            None => g.concat_rows(vec![z1, z2]),
        };
        Ok((g, z))
    }))?;

    let views_per = if thirds.is_some() { 3 } else { 2 };
    let dim = built[0].0.value(built[0].1).ncols();
    let mut stacked = Mat::zeros((views_per * n, dim));
    for (j, (g, z)) in built.iter().enumerate() {
        let v = g.value(*z);
        for r in 0..views_per {
            stacked.row_mut(r * n + j).assign(&v.row(r));
        }
    }

    let mut joint = Graph::new(store);
    let z_in = joint.input(stacked.clone());
    let (loss, l_cl3, l_reg, loss_node) = if views_per == 2 {
        let node = loss_cl_graph(&mut joint, z_in, n, config.objective.temperature);
        (joint.value(node)[[0, 0]], None, None, node)
    } else {
        let nodes = loss_final_graph(&mut joint, z_in, n, &config.objective);
        (
            joint.value(nodes.l_final)[[0, 0]],
            Some(joint.value(nodes.l_cl3)[[0, 0]]),
            Some(joint.value(nodes.l_reg)[[0, 0]]),
            nodes.l_final,
        )
    };
    check_finite_loss(loss, step, epoch, batch, tokenized)?;

    let joint_grads = joint.backward_seeded(loss_node, Mat::from_elem((1, 1), 1.0), false);
    let input_grad = joint_grads
        .node(z_in)
        .expect("contrastive loss depends on every projection")
        .clone();

    let per_example = parallel::map_slice(&slots, |&j| {
        let mut seed = Mat::zeros((views_per, dim));
        for r in 0..views_per {
            seed.row_mut(r).assign(&input_grad.row(r * n + j));
        }
        let (g, z) = &built[j];
        g.backward_seeded(*z, seed, true).into_param_grads()
    });
    let mut grads = ParamGrads::new();
    for pg in &per_example {
        grads.accumulate(pg);
    }
    check_finite_grads(&grads, step, epoch, batch, tokenized)?;

    let record = StepRecord {
        step,
        epoch,
        lr,
        loss,
        l_cl3,
        l_reg,
        mean_closs_adv,
    };
    Ok((record, stacked, grads))
}

/// Run the same configuration once per seed; see [`DEFAULT_SEEDS`].
pub fn run_multiseed<T>(
    base: &TrainConfig,
    seeds: &[u64],
    mut run: impl FnMut(&TrainConfig) -> Result<T>,
) -> Result<Vec<T>> {
    seeds
        .iter()
        .map(|&seed| {
            let config = TrainConfig { seed, ..*base };
            run(&config)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Supervised training
// ---------------------------------------------------------------------------

/// A finished supervised run.
pub struct SupervisedRun {
    pub model: ClassifierModel,
    pub state: TrainState,
}

/// Train encoder + linear head end-to-end with cross-entropy on clean
/// examples.
pub fn train_supervised(
    dataset: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    encoder: &EncoderConfig,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<SupervisedRun> {
    train_supervised_adv(dataset, &[], tokenizer, encoder, num_classes, config)
}

/// [`train_supervised`] over the dataset expanded with labeled adversarial
/// examples (each carrying its source example's label). An empty expansion is
/// exactly the clean run.
pub fn train_supervised_adv(
    dataset: &[LabeledExample],
    adversarial: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    encoder: &EncoderConfig,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<SupervisedRun> {
    config.validate()?;
    if config.regime.is_contrastive() {
        return Err(Error::Config(format!(
            "supervised training expects a supervised regime, got {:?}",
            config.regime
        )));
    }
    if num_classes < 2 {
        return Err(Error::Config("num_classes must be ≥ 2".into()));
    }
    let combined: Vec<LabeledExample> = dataset.iter().chain(adversarial).cloned().collect();
    if combined.is_empty() {
        return Err(Error::Config("supervised training needs examples".into()));
    }
    if let Some(bad) = combined.iter().position(|ex| ex.label >= num_classes) {
        return Err(Error::Config(format!(
            "example {bad} has label {} outside 0..{num_classes}",
            combined[bad].label
        )));
    }

    let tokenized = tokenize_dataset(&combined, tokenizer, encoder.max_len);
    let labels: Vec<usize> = combined.iter().map(|ex| ex.label).collect();
    let mut model = ClassifierModel::new(encoder, num_classes, config.seed)?;
    let mut optimizer = AdamW::new(config.weight_decay);
    let mut state = TrainState::default();

    let per_epoch = steps_per_epoch(combined.len(), config.batch_size, false) as u64;
    let warmup_steps = config.warmup_epochs as u64 * per_epoch;
    let mut step: u64 = 0;
    for epoch in 0..config.epochs as u64 {
        let order = epoch_order(combined.len(), config.seed, epoch);
        for batch in plan_batches(&order, config.batch_size, 1) {
            step += 1;
            let lr = learning_rate_at(step, warmup_steps, config.learning_rate);
            let (record, grads) =
                supervised_step(&model, &batch, &tokenized, &labels, epoch, step, lr)?;
            optimizer.step(&mut model.store, &grads, lr);
            state.records.push(record);
        }
    }
    Ok(SupervisedRun { model, state })
}

pub(crate) fn supervised_step(
    model: &ClassifierModel,
    batch: &[usize],
    tokenized: &[TokenizedExample],
    labels: &[usize],
    epoch: u64,
    step: u64,
    lr: f64,
) -> Result<(StepRecord, ParamGrads)> {
    let n = batch.len();
    let built = collect_results(parallel::map_slice(batch, |&i| {
        let mut g = Graph::new(&model.store);
        let node = model.logits_graph(&mut g, &tokenized[i].subwords)?;
        Ok((g, node))
    }))?;

    let classes = model.num_classes;
    let mut logits = Mat::zeros((n, classes));
    for (j, (g, node)) in built.iter().enumerate() {
        logits.row_mut(j).assign(&g.value(*node).row(0));
    }
    let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
    let loss = objective::cross_entropy(&logits, &batch_labels)?;
    check_finite_loss(loss, step, epoch, batch, tokenized)?;

    // d(mean cross-entropy)/d(logits) = (softmax − one-hot) / n, row-wise.
    let slots: Vec<usize> = (0..n).collect();
    let per_example = parallel::map_slice(&slots, |&j| {
        let mut seed: Vec<f64> = objective::softmax_row(&logits.row(j).to_vec());
        seed[batch_labels[j]] -= 1.0;
        let seed = Mat::from_shape_vec((1, classes), seed)
            .expect("softmax row has `classes` entries")
            / n as f64;
        let (g, node) = &built[j];
        g.backward_seeded(*node, seed, true).into_param_grads()
    });
    let mut grads = ParamGrads::new();
    for pg in &per_example {
        grads.accumulate(pg);
    }
    check_finite_grads(&grads, step, epoch, batch, tokenized)?;

    let record = StepRecord {
        step,
        epoch,
        lr,
        loss,
        l_cl3: None,
        l_reg: None,
        mean_closs_adv: None,
    };
    Ok((record, grads))
}

/// Train one supervised model per batch size; the caller picks a winner by
/// whatever criterion (the robustness sweep feeds attack results back in).
pub fn supervised_batch_sweep(
    dataset: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    encoder: &EncoderConfig,
    num_classes: usize,
    base: &TrainConfig,
    sizes: &[usize],
) -> Result<Vec<(usize, SupervisedRun)>> {
    sizes
        .iter()
        .map(|&batch_size| {
            let config = TrainConfig {
                batch_size,
                ..*base
            };
            train_supervised(dataset, tokenizer, encoder, num_classes, &config)
                .map(|run| (batch_size, run))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Masked-LM training
// ---------------------------------------------------------------------------

/// Settings for training the desk-scale substitution scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmTrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fraction of content positions selected for prediction each epoch.
    pub mask_probability: f64,
}

impl Default for MlmTrainConfig {
    fn default() -> Self {
        MlmTrainConfig {
            epochs: 30,
            warmup_epochs: 1,
            batch_size: 32,
            learning_rate: 2e-3,
            weight_decay: 1e-6,
            seed: DEFAULT_SEEDS[0],
            mask_probability: 0.15,
        }
    }
}

impl MlmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup_epochs must be < epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.mask_probability > 0.0 && self.mask_probability <= 1.0) {
            return Err(Error::Config(
                "mask_probability must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A finished masked-LM run.
pub struct MlmRun {
    pub model: MlmModel,
    pub state: TrainState,
}

struct MaskedExample {
    corrupted: Vec<u32>,
    positions: Vec<usize>,
    targets: Vec<u32>,
}

/// BERT-style corruption: each content position is selected with
/// `mask_probability`; selected positions show the mask token 80% of the
/// time, a random content token 10%, and stay unchanged 10%, while always
/// contributing to the loss.
fn mask_example(subwords: &[u32], vocab_size: usize, probability: f64, rng: &mut ChaCha8Rng) -> MaskedExample {
    let mut corrupted = subwords.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (p, &token) in subwords.iter().enumerate() {
        if (token as usize) < special::COUNT {
            continue;
        }
        if rng.random::<f64>() >= probability {
            continue;
        }
        positions.push(p);
        targets.push(token);
        let mode = rng.random::<f64>();
        if mode < 0.8 {
            corrupted[p] = special::MASK;
        } else if mode < 0.9 {
            corrupted[p] = rng.random_range(special::COUNT as u32..vocab_size as u32);
        }
    }
    MaskedExample {
        corrupted,
        positions,
        targets,
    }
}

/// Train the masked-LM scorer used for substitution candidates.
pub fn train_mlm(
    dataset: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    encoder: &EncoderConfig,
    config: &MlmTrainConfig,
) -> Result<MlmRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("masked-LM training needs examples".into()));
    }
    let tokenized = tokenize_dataset(dataset, tokenizer, encoder.max_len);
    let mut model = MlmModel::new(encoder, config.seed)?;
    let mut optimizer = AdamW::new(config.weight_decay);
    let mut state = TrainState::default();

    let per_epoch = steps_per_epoch(dataset.len(), config.batch_size, false) as u64;
    let warmup_steps = config.warmup_epochs as u64 * per_epoch;
    let mut step: u64 = 0;
    for epoch in 0..config.epochs as u64 {
        let order = epoch_order(dataset.len(), config.seed, epoch);
        for batch in plan_batches(&order, config.batch_size, 1) {
            step += 1;
            let lr = learning_rate_at(step, warmup_steps, config.learning_rate);
            let outcome = mlm_step(&model, &batch, &tokenized, config, epoch, step, lr)?;
            let record = match outcome {
                Some((record, grads)) => {
                    optimizer.step(&mut model.store, &grads, lr);
                    record
                }
                // No position was selected anywhere in the batch: record a
                // no-op step so the history still counts every batch.
                None => StepRecord {
                    step,
                    epoch,
                    lr,
                    loss: 0.0,
                    l_cl3: None,
                    l_reg: None,
                    mean_closs_adv: None,
                },
            };
            state.records.push(record);
        }
    }
    Ok(MlmRun { model, state })
}

fn mlm_step(
    model: &MlmModel,
    batch: &[usize],
    tokenized: &[TokenizedExample],
    config: &MlmTrainConfig,
    epoch: u64,
    step: u64,
    lr: f64,
) -> Result<Option<(StepRecord, ParamGrads)>> {
    let vocab = model.encoder.config.vocab_size;
    let masked: Vec<MaskedExample> = batch
        .iter()
        .map(|&i| {
            let mut mask_rng = rng::stream(config.seed, "mlm-mask", &[i as u64, epoch]);
            mask_example(
                &tokenized[i].subwords,
                vocab,
                config.mask_probability,
                &mut mask_rng,
            )
        })
        .collect();
    let total: usize = masked.iter().map(|m| m.positions.len()).sum();
    if total == 0 {
        return Ok(None);
    }

    let built = collect_results(parallel::map_slice(&masked, |m| {
        let mut g = Graph::new(&model.store);
        let node = model.logits_graph(&mut g, &m.corrupted)?;
        Ok((g, node))
    }))?;

    // Gather every predicted position into one cross-entropy batch.
    let mut gathered = Mat::zeros((total, vocab));
    let mut targets = Vec::with_capacity(total);
    let mut row = 0;
    for (m, (g, node)) in masked.iter().zip(&built) {
        let logits = g.value(*node);
        for (&p, &t) in m.positions.iter().zip(&m.targets) {
            gathered.row_mut(row).assign(&logits.row(p));
            targets.push(t as usize);
            row += 1;
        }
    }
    let loss = objective::cross_entropy(&gathered, &targets)?;
    check_finite_loss(loss, step, epoch, batch, tokenized)?;

    let slots: Vec<usize> = (0..batch.len()).collect();
    let per_example = parallel::map_slice(&slots, |&j| {
        let (g, node) = &built[j];
        let logits = g.value(*node);
        let mut seed = Mat::zeros(logits.raw_dim());
        for (&p, &t) in masked[j].positions.iter().zip(&masked[j].targets) {
            let mut grad_row = objective::softmax_row(&logits.row(p).to_vec());
            grad_row[t as usize] -= 1.0;
            for (col, value) in grad_row.into_iter().enumerate() {
                seed[[p, col]] = value / total as f64;
            }
        }
        g.backward_seeded(*node, seed, true).into_param_grads()
    });
    let mut grads = ParamGrads::new();
    for pg in &per_example {
        grads.accumulate(pg);
    }
    check_finite_grads(&grads, step, epoch, batch, tokenized)?;

    let record = StepRecord {
        step,
        epoch,
        lr,
        loss,
        l_cl3: None,
        l_reg: None,
        mean_closs_adv: None,
    };
    Ok(Some((record, grads)))
}
