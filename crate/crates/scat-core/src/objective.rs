//! Contrastive and classification objectives.
//!
//! Losses come in two in-sync flavors: plain-value functions over projection
//! vectors (used by the adversarial generator, evaluation, and as test
//! oracles) and graph builders over autodiff nodes (used by training). Both
//! share the numeric kernels in [`crate::tensor::kernels`].
//!
//! Conventions: a batch of N examples contributes 2N projection vectors (two
//! views) or 3N (plus the adversarial view). A pair loss for anchor `a` and
//! positive `p` is `−log[exp(sim(a,p)/τ) / Σ_{j ≠ a} exp(sim(a,j)/τ)]`, where
//! `j` ranges over every vector in the set except the anchor itself and `sim`
//! is cosine similarity. Batch reductions are means over examples.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, lse_skip};
use crate::tensor::{Graph, Mat, NodeId};

/// Temperature and regularization strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub temperature: f64,
    pub lambda: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            temperature: 0.5,
            lambda: 1.0 / 256.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Which view a projection vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    View1,
    View2,
    Adv,
}

/// The projection vectors of one mini-batch: two views per example, plus the
/// adversarial view when present.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    view1: Vec<Array1<f64>>,
    view2: Vec<Array1<f64>>,
    adv: Option<Vec<Array1<f64>>>,
}

impl ContrastiveBatch {
    pub fn new(view1: Vec<Array1<f64>>, view2: Vec<Array1<f64>>) -> Result<Self> {
        Self::build(view1, view2, None)
    }

    pub fn with_adv(
        view1: Vec<Array1<f64>>,
        view2: Vec<Array1<f64>>,
        adv: Vec<Array1<f64>>,
    ) -> Result<Self> {
        Self::build(view1, view2, Some(adv))
    }

    fn build(
        view1: Vec<Array1<f64>>,
        view2: Vec<Array1<f64>>,
        adv: Option<Vec<Array1<f64>>>,
    ) -> Result<Self> {
        let n = view1.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "contrastive batch needs at least 2 examples, got {n}"
            )));
        }
        if view2.len() != n || adv.as_ref().map(|a| a.len() != n).unwrap_or(false) {
            return Err(Error::Config("view lists must have equal length".into()));
        }
        let dim = view1[0].len();
        let batch = ContrastiveBatch { view1, view2, adv };
        for (_, v) in batch.iter_flat() {
            if v.len() != dim {
                return Err(Error::Config("projection dimensions differ".into()));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Config("projection contains non-finite entries".into()));
            }
        }
        Ok(batch)
    }

    pub fn n(&self) -> usize {
        self.view1.len()
    }

    pub fn has_adv(&self) -> bool {
        self.adv.is_some()
    }

    /// Total number of vectors (2N or 3N).
    pub fn set_size(&self) -> usize {
        self.n() * if self.has_adv() { 3 } else { 2 }
    }

    pub fn vector(&self, role: Role, index: usize) -> &Array1<f64> {
        match role {
            Role::View1 => &self.view1[index],
            Role::View2 => &self.view2[index],
            Role::Adv => &self.adv.as_ref().expect("batch has no adv view")[index],
        }
    }

    /// Flat enumeration: all view1 vectors, then view2, then adv.
    pub fn iter_flat(&self) -> impl Iterator<Item = ((Role, usize), &Array1<f64>)> {
        let v1 = self.view1.iter().enumerate().map(|(i, v)| ((Role::View1, i), v));
        let v2 = self.view2.iter().enumerate().map(|(i, v)| ((Role::View2, i), v));
        let adv = self
            .adv
            .iter()
            .flat_map(|a| a.iter().enumerate().map(|(i, v)| ((Role::Adv, i), v)));
        v1.chain(v2).chain(adv)
    }

    fn flat_index(&self, role: Role, index: usize) -> usize {
        let n = self.n();
        match role {
            Role::View1 => index,
            Role::View2 => n + index,
            Role::Adv => 2 * n + index,
        }
    }

    /// All vectors L2-normalized, in flat order; errors on a zero vector.
    fn normalized(&self) -> Result<Vec<Array1<f64>>> {
        self.iter_flat()
            .map(|((role, i), v)| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm <= 0.0 {
                    return Err(Error::Config(format!(
                        "zero projection vector at ({role:?}, {i})"
                    )));
                }
                Ok(v / norm)
            })
            .collect()
    }

    /// Stack all vectors into a `[set_size, dim]` matrix in flat order.
    pub fn stacked(&self) -> Mat {
        let dim = self.view1[0].len();
        let mut out = Mat::zeros((self.set_size(), dim));
        for ((role, i), v) in self.iter_flat() {
            out.row_mut(self.flat_index(role, i)).assign(v);
        }
        out
    }
}

/// Cosine similarity; errors on zero vectors.
pub fn cosine_sim(u: &Array1<f64>, v: &Array1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Config("cosine_sim: dimension mismatch".into()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu <= 0.0 || nv <= 0.0 {
        return Err(Error::Config("cosine_sim: zero vector".into()));
    }
    Ok(u.dot(v) / (nu * nv))
}

/// Contrastive loss of one ordered (anchor, positive) pair against the whole
/// batch, with the denominator over every vector except the anchor.
pub fn pair_loss(
    batch: &ContrastiveBatch,
    anchor: (Role, usize),
    positive: (Role, usize),
    temperature: f64,
) -> Result<f64> {
    if anchor == positive {
        return Err(Error::Config("pair_loss: anchor equals positive".into()));
    }
    let normalized = batch.normalized()?;
    Ok(pair_loss_normalized(
        batch,
        &normalized,
        anchor,
        positive,
        temperature,
    ))
}

fn pair_loss_normalized(
    batch: &ContrastiveBatch,
    normalized: &[Array1<f64>],
    anchor: (Role, usize),
    positive: (Role, usize),
    temperature: f64,
) -> f64 {
    let a = batch.flat_index(anchor.0, anchor.1);
    let p = batch.flat_index(positive.0, positive.1);
    let za = &normalized[a];
    let sims: Vec<f64> = normalized
        .iter()
        .map(|zj| za.dot(zj) / temperature)
        .collect();
    lse_skip(&sims, Some(a)) - sims[p]
}

/// Symmetric pair loss `l(a,b) + l(b,a)` for one example's two views.
pub fn symmetric_pair_loss(
    batch: &ContrastiveBatch,
    a: (Role, usize),
    b: (Role, usize),
    temperature: f64,
) -> Result<f64> {
    Ok(pair_loss(batch, a, b, temperature)? + pair_loss(batch, b, a, temperature)?)
}

/// Two-view contrastive loss: mean over examples of the symmetric pair loss.
/// The batch must not contain adversarial vectors.
pub fn loss_cl(batch: &ContrastiveBatch, temperature: f64) -> Result<f64> {
    if batch.has_adv() {
        return Err(Error::Config(
            "loss_cl expects a two-view batch; use loss_cl3 for three views".into(),
        ));
    }
    let normalized = batch.normalized()?;
    let n = batch.n();
    let mut total = 0.0;
    for i in 0..n {
        total += pair_loss_normalized(batch, &normalized, (Role::View1, i), (Role::View2, i), temperature)
            + pair_loss_normalized(batch, &normalized, (Role::View2, i), (Role::View1, i), temperature);
    }
    Ok(total / n as f64)
}

/// Three-view contrastive loss: per example, the symmetric pair losses of
/// (view1, view2), (view1, adv), and (view2, adv), each with denominators
/// over all 3N vectors; mean over examples.
pub fn loss_cl3(batch: &ContrastiveBatch, temperature: f64) -> Result<f64> {
    let terms = per_example_terms(batch, temperature)?;
    let n = terms.len() as f64;
    Ok(terms.iter().map(|t| t.v1_v2 + t.v1_adv + t.v2_adv).sum::<f64>() / n)
}

/// The symmetric pair-loss terms of one example within a 3N batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTerms {
    pub v1_v2: f64,
    pub v1_adv: f64,
    pub v2_adv: f64,
    /// Regularizer term: symmetric pair loss of (adv, view2).
    pub reg: f64,
}

fn per_example_terms(batch: &ContrastiveBatch, temperature: f64) -> Result<Vec<PairTerms>> {
    if !batch.has_adv() {
        return Err(Error::Config("loss_cl3 requires adversarial vectors".into()));
    }
    let normalized = batch.normalized()?;
    let n = batch.n();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let sym = |a: (Role, usize), b: (Role, usize)| {
            pair_loss_normalized(batch, &normalized, a, b, temperature)
                + pair_loss_normalized(batch, &normalized, b, a, temperature)
        };
        let v1_v2 = sym((Role::View1, i), (Role::View2, i));
        let v1_adv = sym((Role::View1, i), (Role::Adv, i));
        let v2_adv = sym((Role::View2, i), (Role::Adv, i));
        let reg = sym((Role::Adv, i), (Role::View2, i));
        out.push(PairTerms {
            v1_v2,
            v1_adv,
            v2_adv,
            reg,
        });
    }
    Ok(out)
}

/// Final-objective decomposition; `l_final = l_cl3 + λ·l_reg` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cl3: f64,
    pub l_reg: f64,
    pub l_final: f64,
    pub per_example: Vec<PairTerms>,
}

/// Final pre-training objective: three-view loss plus λ times the
/// regularizer (the (adv, view2) symmetric pair loss, same 3N denominators).
pub fn loss_final(batch: &ContrastiveBatch, config: &ObjectiveConfig) -> Result<LossBreakdown> {
    config.validate()?;
    let per_example = per_example_terms(batch, config.temperature)?;
    let n = per_example.len() as f64;
    let l_cl3 = per_example
        .iter()
        .map(|t| t.v1_v2 + t.v1_adv + t.v2_adv)
        .sum::<f64>()
        / n;
    let l_reg = per_example.iter().map(|t| t.reg).sum::<f64>() / n;
    let l_final = l_cl3 + config.lambda * l_reg;
    Ok(LossBreakdown {
        l_cl3,
        l_reg,
        l_final,
        per_example,
    })
}

/// Mean cross-entropy of logits `[B, C]` against class labels.
pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Config(format!(
            "cross_entropy: {} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Config("cross_entropy: empty batch".into()));
    }
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= logits.ncols() {
            return Err(Error::Config(format!(
                "cross_entropy: label {label} out of range for {} classes",
                logits.ncols()
            )));
        }
        let vals: Vec<f64> = row.to_vec();
        total += lse_skip(&vals, None) - vals[label];
    }
    Ok(total / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// Graph builders (training path)
// ---------------------------------------------------------------------------

/// Ordered (anchor, positive) index pairs for N examples in a 2N stack.
fn cl_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(2 * n);
    for i in 0..n {
        pairs.push((i, n + i));
        pairs.push((n + i, i));
    }
    pairs
}

/// Graph version of [`loss_cl`] over a `[2N, dim]` stack of projections
/// (rows: view1 of every example, then view2).
pub fn loss_cl_graph(g: &mut Graph, z: NodeId, n: usize, temperature: f64) -> NodeId {
    assert_eq!(g.value(z).nrows(), 2 * n, "loss_cl_graph: stack must be 2N");
    let zn = g.l2_normalize_rows(z);
    let sims = g.matmul_trans_b(zn, zn);
    let sims = g.scale(sims, 1.0 / temperature);
    let lse = g.log_sum_exp_rows_skip_diag(sims);
    let pairs = cl_pairs(n);
    let anchor_coords: Vec<(usize, usize)> = pairs.iter().map(|&(a, _)| (a, 0)).collect();
    let pair_coords: Vec<(usize, usize)> = pairs.clone();
    let lse_at = g.gather_entries(lse, anchor_coords);
    let sim_at = g.gather_entries(sims, pair_coords);
    let per_pair = g.sub(lse_at, sim_at);
    let mean = g.mean_all(per_pair);
    // Mean over 2N ordered terms × 2 = mean over N examples of the symmetric
    // pair loss.
    g.scale(mean, 2.0)
}

/// Nodes of the final-objective graph.
pub struct FinalLossNodes {
    pub l_final: NodeId,
    pub l_cl3: NodeId,
    pub l_reg: NodeId,
}

/// Graph version of [`loss_final`] over a `[3N, dim]` stack of projections
/// (rows: view1 of every example, then view2, then adv).
pub fn loss_final_graph(
    g: &mut Graph,
    z: NodeId,
    n: usize,
    config: &ObjectiveConfig,
) -> FinalLossNodes {
    assert_eq!(g.value(z).nrows(), 3 * n, "loss_final_graph: stack must be 3N");
    let zn = g.l2_normalize_rows(z);
    let sims = g.matmul_trans_b(zn, zn);
    let sims = g.scale(sims, 1.0 / config.temperature);
    let lse = g.log_sum_exp_rows_skip_diag(sims);

    let ordered = |pairs: &[(usize, usize)], g: &mut Graph| -> NodeId {
        let anchor_coords: Vec<(usize, usize)> = pairs.iter().map(|&(a, _)| (a, 0)).collect();
        let lse_at = g.gather_entries(lse, anchor_coords);
        let sim_at = g.gather_entries(sims, pairs.to_vec());
        g.sub(lse_at, sim_at)
    };

    // Six ordered terms per example: both directions of (v1,v2), (v1,adv),
    // (v2,adv). Rows: v1 = i, v2 = n+i, adv = 2n+i.
    let mut cl3_pairs = Vec::with_capacity(6 * n);
    for i in 0..n {
        let (v1, v2, adv) = (i, n + i, 2 * n + i);
        cl3_pairs.extend_from_slice(&[
            (v1, v2),
            (v2, v1),
            (v1, adv),
            (adv, v1),
            (v2, adv),
            (adv, v2),
        ]);
    }
    let cl3_terms = ordered(&cl3_pairs, g);
    let cl3_mean = g.mean_all(cl3_terms);
    let l_cl3 = g.scale(cl3_mean, 6.0);

    let mut reg_pairs = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (v2, adv) = (n + i, 2 * n + i);
        reg_pairs.extend_from_slice(&[(adv, v2), (v2, adv)]);
    }
    let reg_terms = ordered(&reg_pairs, g);
    let reg_mean = g.mean_all(reg_terms);
    let l_reg = g.scale(reg_mean, 2.0);

    let scaled_reg = g.scale(l_reg, config.lambda);
    let l_final = g.add(l_cl3, scaled_reg);
    FinalLossNodes {
        l_final,
        l_cl3,
        l_reg,
    }
}

/// Graph version of the two-view loss used by the extra-augmentation regime:
/// treats the third augmentation like the adversarial slot of
/// [`loss_final_graph`] for structural parity across regimes.
pub use self::loss_final_graph as loss_three_view_graph;

/// Stable log-softmax probability helper shared by attack scoring.
pub fn log_softmax_row(values: &[f64]) -> Vec<f64> {
    let lse = lse_skip(values, None);
    values.iter().map(|v| v - lse).collect()
}

/// Softmax probabilities of one logit row.
pub fn softmax_row(values: &[f64]) -> Vec<f64> {
    log_softmax_row(values).iter().map(|v| v.exp()).collect()
}

#[allow(unused_imports)]
pub(crate) use kernels::cosine as cosine_slice;
