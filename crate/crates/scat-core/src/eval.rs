//! Downstream evaluation: linear evaluation on a frozen encoder, full
//! fine-tuning, robustness metrics (accuracy, after-attack accuracy, attack
//! failure rate), and multi-seed aggregation.
//!
//! Both evaluation modes train a linear head with cross-entropy and keep the
//! head (plus, when fine-tuning, the encoder) from the epoch with the best
//! validation accuracy, breaking ties toward the earliest epoch. Linear
//! evaluation never writes to an encoder parameter: the head is trained
//! against pooled features computed once, so the freeze contract is
//! bit-exact by construction.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, SubwordTokenizer};
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, ScatModel};
use crate::objective::{self};
use crate::parallel;
use crate::tensor::{Graph, Mat, ParamGrads};
use crate::train::{
    collect_results, epoch_order, plan_batches, supervised_step, tokenize_dataset, AdamW,
    StepRecord, TrainState,
};

/// Evaluation mode: train only a linear head on the frozen encoder, or
/// fine-tune everything end-to-end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Linear,
    Finetune,
}

/// Hyperparameters for an evaluation training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl EvalConfig {
    /// Linear-evaluation preset: 100 epochs at batch 128 with learning rate
    /// and weight decay both 5e-4.
    pub fn linear() -> Self {
        EvalConfig {
            mode: EvalMode::Linear,
            epochs: 100,
            batch_size: 128,
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            seed: 2020,
        }
    }

    /// Fine-tuning preset: 50 epochs with learning rate 2e-5.
    pub fn finetune() -> Self {
        EvalConfig {
            mode: EvalMode::Finetune,
            epochs: 50,
            batch_size: 32,
            learning_rate: 2e-5,
            weight_decay: 1e-6,
            seed: 2020,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig::linear()
    }
}

/// A finished evaluation: the selected classifier plus the selection trace.
pub struct EvalRun {
    pub classifier: ClassifierModel,
    /// Epoch (0-based) whose head/weights were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Validation accuracy (percent) after each epoch.
    pub val_accuracy: Vec<f64>,
    pub state: TrainState,
}

fn check_eval_inputs(
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    num_classes: usize,
) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Config("num_classes must be ≥ 2".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Eval("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Eval("validation split is empty".into()));
    }
    for (split, name) in [(train_set, "train"), (val_set, "validation")] {
        if let Some(bad) = split.iter().position(|ex| ex.label >= num_classes) {
            return Err(Error::Config(format!(
                "{name} example {bad} has label {} outside 0..{num_classes}",
                split[bad].label
            )));
        }
    }
    Ok(())
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Train a linear head on the frozen encoder's pooled features, keeping the
/// best-validation-epoch head. Encoder parameters are never written: feature
/// extraction happens once up front, and gradient flow only reaches the two
/// head parameters.
pub fn linear_evaluate(
    encoder: &ScatModel,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    num_classes: usize,
    config: &EvalConfig,
) -> Result<EvalRun> {
    config.validate()?;
    if config.mode != EvalMode::Linear {
        return Err(Error::Config(format!(
            "linear_evaluate expects mode linear, got {:?}",
            config.mode
        )));
    }
    check_eval_inputs(train_set, val_set, num_classes)?;

    let max_len = encoder.encoder.config.max_len;
    let features = |split: &[LabeledExample]| -> Result<Mat> {
        let tokenized = tokenize_dataset(split, tokenizer, max_len);
        let rows = collect_results(parallel::map_slice(&tokenized, |t| {
            encoder.pooled(&t.subwords)
        }))?;
        let hidden = rows[0].len();
        let mut m = Mat::zeros((split.len(), hidden));
        for (i, row) in rows.iter().enumerate() {
            m.row_mut(i).assign(row);
        }
        Ok(m)
    };
    let train_features = features(train_set)?;
    let val_features = features(val_set)?;
    let train_labels: Vec<usize> = train_set.iter().map(|ex| ex.label).collect();
    let val_labels: Vec<usize> = val_set.iter().map(|ex| ex.label).collect();

    let mut model = ClassifierModel::from_encoder(
        &encoder.store,
        &encoder.encoder.config,
        num_classes,
        config.seed,
    )?;
    let w_id = model
        .store
        .id_of("classifier.w")
        .expect("classifier head registered");
    let b_id = model
        .store
        .id_of("classifier.b")
        .expect("classifier head registered");

    let mut optimizer = AdamW::new(config.weight_decay);
    let mut state = TrainState::default();
    let mut best: Option<(usize, f64, Mat, Mat)> = None;
    let mut val_accuracy = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let order = epoch_order(train_set.len(), config.seed, epoch as u64);
        for batch in plan_batches(&order, config.batch_size, 1) {
            step += 1;
            let n = batch.len();
            let mut batch_features = Mat::zeros((n, train_features.ncols()));
            for (j, &i) in batch.iter().enumerate() {
                batch_features.row_mut(j).assign(&train_features.row(i));
            }
            let batch_labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();

            let mut g = Graph::new(&model.store);
            let x = g.input(batch_features);
            let w = g.param(w_id);
            let b = g.param(b_id);
            let wx = g.matmul(x, w);
            let logits_node = g.add_row(wx, b);
            let logits = g.value(logits_node).clone();
            let loss = objective::cross_entropy(&logits, &batch_labels)?;

            let mut seed = Mat::zeros((n, num_classes));
            for (j, &label) in batch_labels.iter().enumerate() {
                let mut row = objective::softmax_row(&logits.row(j).to_vec());
                row[label] -= 1.0;
                for (c, v) in row.into_iter().enumerate() {
                    seed[[j, c]] = v / n as f64;
                }
            }
            let grads: ParamGrads = g
                .backward_seeded(logits_node, seed, true)
                .into_param_grads();
            drop(g);
            optimizer.step(&mut model.store, &grads, config.learning_rate);
            state.records.push(StepRecord {
                step,
                epoch: epoch as u64,
                lr: config.learning_rate,
                loss,
                l_cl3: None,
                l_reg: None,
                mean_closs_adv: None,
            });
        }

        let w = model.store.get(w_id);
        let b = model.store.get(b_id);
        let logits = val_features.dot(w) + b.row(0);
        let correct = (0..val_set.len())
            .filter(|&i| argmax_row(logits.row(i).as_slice().unwrap()) == val_labels[i])
            .count();
        let accuracy = 100.0 * correct as f64 / val_set.len() as f64;
        val_accuracy.push(accuracy);
        if best.as_ref().is_none_or(|(_, acc, _, _)| accuracy > *acc) {
            best = Some((epoch, accuracy, w.clone(), b.clone()));
        }
    }

    let (best_epoch, best_val_accuracy, best_w, best_b) = best.expect("epochs ≥ 1");
    *model.store.get_mut(w_id) = best_w;
    *model.store.get_mut(b_id) = best_b;
    Ok(EvalRun {
        classifier: model,
        best_epoch,
        best_val_accuracy,
        val_accuracy,
        state,
    })
}

/// Fine-tune encoder and head end-to-end, keeping the weights from the epoch
/// with the best validation accuracy (ties to the earliest).
pub fn finetune_evaluate(
    encoder: &ScatModel,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    tokenizer: &SubwordTokenizer,
    num_classes: usize,
    config: &EvalConfig,
) -> Result<EvalRun> {
    config.validate()?;
    if config.mode != EvalMode::Finetune {
        return Err(Error::Config(format!(
            "finetune_evaluate expects mode finetune, got {:?}",
            config.mode
        )));
    }
    check_eval_inputs(train_set, val_set, num_classes)?;

    let max_len = encoder.encoder.config.max_len;
    let tokenized = tokenize_dataset(train_set, tokenizer, max_len);
    let val_tokenized = tokenize_dataset(val_set, tokenizer, max_len);
    let labels: Vec<usize> = train_set.iter().map(|ex| ex.label).collect();

    let mut model = ClassifierModel::from_encoder(
        &encoder.store,
        &encoder.encoder.config,
        num_classes,
        config.seed,
    )?;
    let mut optimizer = AdamW::new(config.weight_decay);
    let mut state = TrainState::default();
    let mut best: Option<(usize, f64, crate::tensor::ParamStore)> = None;
    let mut val_accuracy = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let order = epoch_order(train_set.len(), config.seed, epoch as u64);
        for batch in plan_batches(&order, config.batch_size, 1) {
            step += 1;
            let (record, grads) = supervised_step(
                &model,
                &batch,
                &tokenized,
                &labels,
                epoch as u64,
                step,
                config.learning_rate,
            )?;
            optimizer.step(&mut model.store, &grads, config.learning_rate);
            state.records.push(record);
        }

        let predictions = collect_results(parallel::map_slice(&val_tokenized, |t| {
            let logits = model.logits(&t.subwords)?;
            Ok(argmax_row(logits.as_slice().unwrap()))
        }))?;
        let correct = predictions
            .iter()
            .zip(val_set)
            .filter(|(&p, ex)| p == ex.label)
            .count();
        let accuracy = 100.0 * correct as f64 / val_set.len() as f64;
        val_accuracy.push(accuracy);
        if best.as_ref().is_none_or(|(_, acc, _)| accuracy > *acc) {
            best = Some((epoch, accuracy, model.store.clone()));
        }
    }

    let (best_epoch, best_val_accuracy, best_store) = best.expect("epochs ≥ 1");
    model.store = best_store;
    Ok(EvalRun {
        classifier: model,
        best_epoch,
        best_val_accuracy,
        val_accuracy,
        state,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Clean accuracy, after-attack accuracy, and attack failure rate, all in
/// percent. Values carry full precision; round for display with [`round1`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub acc: f64,
    pub atk_acc: f64,
    pub afr: f64,
    /// Set when `acc` is zero, which leaves the failure rate undefined; the
    /// reported `afr` is then 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub afr_undefined: bool,
}

impl MetricTriple {
    /// Build from clean and after-attack accuracies in percent; the failure
    /// rate is derived as `100 · atk_acc / acc`.
    pub fn from_accuracies(acc: f64, atk_acc: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&acc) || !(0.0..=100.0).contains(&atk_acc) {
            return Err(Error::Eval(format!(
                "accuracies must lie in [0, 100], got acc {acc}, atk_acc {atk_acc}"
            )));
        }
        if atk_acc > acc {
            return Err(Error::Eval(format!(
                "after-attack accuracy {atk_acc} exceeds clean accuracy {acc}"
            )));
        }
        if acc == 0.0 {
            return Ok(MetricTriple {
                acc,
                atk_acc,
                afr: 0.0,
                afr_undefined: true,
            });
        }
        Ok(MetricTriple {
            acc,
            atk_acc,
            afr: 100.0 * atk_acc / acc,
            afr_undefined: false,
        })
    }
}

/// Round to one decimal for display.
pub fn round1(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

/// Metrics from per-example correctness: `clean_correct[i]` is whether the
/// model classified example `i` correctly before any attack,
/// `post_attack_correct[i]` whether it is still correct on the attacker's
/// final text.
pub fn compute_metrics(clean_correct: &[bool], post_attack_correct: &[bool]) -> Result<MetricTriple> {
    if clean_correct.is_empty() {
        return Err(Error::Eval("metrics need at least one example".into()));
    }
    if clean_correct.len() != post_attack_correct.len() {
        return Err(Error::Eval(format!(
            "correctness vectors differ in length: {} vs {}",
            clean_correct.len(),
            post_attack_correct.len()
        )));
    }
    let total = clean_correct.len() as f64;
    let acc = 100.0 * clean_correct.iter().filter(|&&c| c).count() as f64 / total;
    let atk_acc = 100.0 * post_attack_correct.iter().filter(|&&c| c).count() as f64 / total;
    MetricTriple::from_accuracies(acc, atk_acc)
}

/// Metrics from raw predictions (clean pass and post-attack pass) against
/// gold labels.
pub fn compute_metrics_from_predictions(
    clean_predictions: &[usize],
    labels: &[usize],
    post_attack_predictions: &[usize],
) -> Result<MetricTriple> {
    if clean_predictions.len() != labels.len() || post_attack_predictions.len() != labels.len() {
        return Err(Error::Eval(format!(
            "prediction/label lengths differ: clean {}, labels {}, post-attack {}",
            clean_predictions.len(),
            labels.len(),
            post_attack_predictions.len()
        )));
    }
    let clean: Vec<bool> = clean_predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| p == l)
        .collect();
    let post: Vec<bool> = post_attack_predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| p == l)
        .collect();
    compute_metrics(&clean, &post)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Mean and population standard deviation (divisor n) of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub sd: f64,
}

fn stats(values: impl Iterator<Item = f64> + Clone) -> MetricStats {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let variance = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MetricStats {
        mean,
        sd: variance.sqrt(),
    }
}

/// Per-seed metrics plus their mean and spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_seed: Vec<MetricTriple>,
    pub acc: MetricStats,
    pub atk_acc: MetricStats,
    pub afr: MetricStats,
}

/// Aggregate one configuration's metrics across seeds.
pub fn aggregate_seeds(triples: &[MetricTriple]) -> Result<AggregateReport> {
    if triples.is_empty() {
        return Err(Error::Eval("aggregation needs at least one run".into()));
    }
    Ok(AggregateReport {
        per_seed: triples.to_vec(),
        acc: stats(triples.iter().map(|t| t.acc)),
        atk_acc: stats(triples.iter().map(|t| t.atk_acc)),
        afr: stats(triples.iter().map(|t| t.afr)),
    })
}

/// Mean of `treated − baseline` over paired values.
pub fn mean_delta(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Eval("delta summary needs at least one pair".into()));
    }
    Ok(pairs
        .iter()
        .map(|(baseline, treated)| treated - baseline)
        .sum::<f64>()
        / pairs.len() as f64)
}

/// Average metric improvements of a treated model over a baseline, paired by
/// setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub acc_delta: f64,
    pub atk_acc_delta: f64,
    pub afr_delta: f64,
}

/// Mean per-pair metric deltas: each pair is (baseline, treated).
pub fn improvement_summary(pairs: &[(MetricTriple, MetricTriple)]) -> Result<ImprovementSummary> {
    if pairs.is_empty() {
        return Err(Error::Eval("delta summary needs at least one pair".into()));
    }
    let collect = |f: fn(&MetricTriple) -> f64| -> Vec<(f64, f64)> {
        pairs.iter().map(|(b, t)| (f(b), f(t))).collect()
    };
    Ok(ImprovementSummary {
        acc_delta: mean_delta(&collect(|t| t.acc))?,
        atk_acc_delta: mean_delta(&collect(|t| t.atk_acc))?,
        afr_delta: mean_delta(&collect(|t| t.afr))?,
    })
}

#[cfg(test)]
mod tests;
