//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! A [`Graph`] is a define-by-run tape: every builder method computes its
//! value eagerly and records the operation. [`Graph::backward`] walks the tape
//! in reverse, producing gradients for every reachable node and, optionally,
//! for the parameters in the attached [`ParamStore`]. Gradients with respect
//! to intermediate nodes (not just parameters) are retrievable, which the
//! adversarial generator uses to rank input words by the gradient norm of
//! their embeddings.
//!
//! The op set is exactly what small transformer encoders, projection heads,
//! and the contrastive / cross-entropy losses need; each op's backward rule is
//! hand-derived and covered by finite-difference tests.

pub mod kernels;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use kernels::{gelu, gelu_prime, layer_norm_rows, l2_normalize_rows, lse_skip, softmax_rows};

/// The crate-wide dense matrix type.
pub type Mat = Array2<f64>;

/// Identifier of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Identifier of a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Named parameter matrices with stable ordering.
///
/// Parameter order is the registration order, which makes checkpoints and
/// optimizer state layouts reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Look up a parameter by name.
    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

/// Parameter gradients accumulated across one or more backward passes.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads(pub BTreeMap<ParamId, Mat>);

impl ParamGrads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.0.get(&id)
    }

    /// Add `other` into `self`. Call sites accumulate per-example gradients in
    /// index order so the floating-point sum is deterministic.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (id, grad) in &other.0 {
            match self.0.get_mut(id) {
                Some(acc) => *acc += grad,
                None => {
                    self.0.insert(*id, grad.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.0.values_mut() {
            grad.mapv_inplace(|v| v * factor);
        }
    }

    /// Global L2 norm over all gradients (used for divergence detection).
    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of a backward pass: gradients by node and by parameter.
#[derive(Debug)]
pub struct Gradients {
    node_grads: Vec<Option<Mat>>,
    param_grads: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a node's output, if the node was reached.
    pub fn node(&self, id: NodeId) -> Option<&Mat> {
        self.node_grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.param_grads.get(id)
    }

    pub fn into_param_grads(self) -> ParamGrads {
        self.param_grads
    }
}

#[derive(Debug)]
enum Op {
    /// Constant input; gradients stop here (but are still recorded).
    Value,
    /// Leaf referencing a parameter in the store.
    Param(ParamId),
    /// `out[i] = input[indices[i]]` (row gather, e.g. embedding lookup).
    GatherRows { input: NodeId, indices: Vec<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Matrix plus a `[1, n]` row broadcast over all rows.
    AddRow { input: NodeId, row: NodeId },
    /// Matrix times a `[1, n]` row broadcast over all rows.
    MulRow { input: NodeId, row: NodeId },
    Scale { input: NodeId, factor: f64 },
    /// `A (m,k) · B (k,n)`.
    Matmul(NodeId, NodeId),
    /// `A (m,k) · Bᵀ` with `B (n,k)`.
    MatmulTransB(NodeId, NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    /// Row-wise `(x - mean) / sqrt(var + eps)`, no affine part.
    LayerNormRows { input: NodeId, eps: f64 },
    L2NormalizeRows(NodeId),
    /// Extract row `index` as a `[1, n]` matrix.
    Row { input: NodeId, index: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    /// For a square matrix `S`, `out[i] = log Σ_{k≠i} exp(S[i,k])` as `[n, 1]`.
    LogSumExpRowsSkipDiag(NodeId),
    /// `out[j] = input[coords[j]]` as a `[len, 1]` column.
    GatherEntries {
        input: NodeId,
        coords: Vec<(usize, usize)>,
    },
    MeanAll(NodeId),
    SumAll(NodeId),
    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    CrossEntropyMean { logits: NodeId, targets: Vec<usize> },
}

struct Node {
    op: Op,
    /// Cached output. Empty for `Param` nodes, which read from the store.
    value: Mat,
}

/// Define-by-run autodiff tape over a read-only [`ParamStore`].
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    /// Output value of a node.
    pub fn value(&self, id: NodeId) -> &Mat {
        match self.nodes[id.0].op {
            Op::Param(pid) => self.store.get(pid),
            _ => &self.nodes[id.0].value,
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input node.
    pub fn input(&mut self, value: Mat) -> NodeId {
        self.push(Op::Value, value)
    }

    /// Node view of a stored parameter.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id), Mat::zeros((0, 0)))
    }

    pub fn gather_rows(&mut self, input: NodeId, indices: Vec<usize>) -> NodeId {
        let src = self.value(input);
        let cols = src.ncols();
        let mut out = Mat::zeros((indices.len(), cols));
        for (i, &r) in indices.iter().enumerate() {
            assert!(r < src.nrows(), "gather_rows: row {r} out of bounds");
            out.row_mut(i).assign(&src.row(r));
        }
        self.push(Op::GatherRows { input, indices }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), out)
    }

    pub fn add_row(&mut self, input: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row: row operand must be [1, n]");
        let out = self.value(input) + &r.row(0);
        self.push(Op::AddRow { input, row }, out)
    }

    pub fn mul_row(&mut self, input: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "mul_row: row operand must be [1, n]");
        let out = self.value(input) * &r.row(0);
        self.push(Op::MulRow { input, row }, out)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let out = self.value(input) * factor;
        self.push(Op::Scale { input, factor }, out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).dot(self.value(b));
        self.push(Op::Matmul(a, b), out)
    }

    pub fn matmul_trans_b(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatmulTransB(a, b), out)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).mapv(|v| v.max(0.0));
        self.push(Op::Relu(input), out)
    }

    pub fn gelu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).mapv(gelu);
        self.push(Op::Gelu(input), out)
    }

    pub fn softmax_rows(&mut self, input: NodeId) -> NodeId {
        let out = softmax_rows(self.value(input));
        self.push(Op::SoftmaxRows(input), out)
    }

    pub fn layer_norm_rows(&mut self, input: NodeId, eps: f64) -> NodeId {
        let out = layer_norm_rows(self.value(input), eps);
        self.push(Op::LayerNormRows { input, eps }, out)
    }

    pub fn l2_normalize_rows(&mut self, input: NodeId) -> NodeId {
        let out = l2_normalize_rows(self.value(input));
        self.push(Op::L2NormalizeRows(input), out)
    }

    pub fn row(&mut self, input: NodeId, index: usize) -> NodeId {
        let src = self.value(input);
        assert!(index < src.nrows(), "row: index out of bounds");
        let out = src.row(index).insert_axis(Axis(0)).to_owned();
        self.push(Op::Row { input, index }, out)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: empty part list");
        let rows = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut out = Mat::zeros((rows, total));
        let mut offset = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat_cols: row count mismatch");
            out.slice_mut(ndarray::s![.., offset..offset + v.ncols()])
                .assign(v);
            offset += v.ncols();
        }
        self.push(Op::ConcatCols(parts), out)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: empty part list");
        let cols = self.value(parts[0]).ncols();
        let total: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut out = Mat::zeros((total, cols));
        let mut offset = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.ncols(), cols, "concat_rows: column count mismatch");
            out.slice_mut(ndarray::s![offset..offset + v.nrows(), ..])
                .assign(v);
            offset += v.nrows();
        }
        self.push(Op::ConcatRows(parts), out)
    }

    pub fn log_sum_exp_rows_skip_diag(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input);
        assert_eq!(s.nrows(), s.ncols(), "lse_skip_diag: matrix must be square");
        assert!(s.nrows() >= 2, "lse_skip_diag: needs at least two rows");
        let mut out = Mat::zeros((s.nrows(), 1));
        for i in 0..s.nrows() {
            let row: Vec<f64> = s.row(i).to_vec();
            out[[i, 0]] = lse_skip(&row, Some(i));
        }
        self.push(Op::LogSumExpRowsSkipDiag(input), out)
    }

    pub fn gather_entries(&mut self, input: NodeId, coords: Vec<(usize, usize)>) -> NodeId {
        let src = self.value(input);
        let mut out = Mat::zeros((coords.len(), 1));
        for (j, &(r, c)) in coords.iter().enumerate() {
            assert!(
                r < src.nrows() && c < src.ncols(),
                "gather_entries: ({r},{c}) out of bounds"
            );
            out[[j, 0]] = src[[r, c]];
        }
        self.push(Op::GatherEntries { input, coords }, out)
    }

    pub fn mean_all(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input);
        let out = Mat::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(Op::MeanAll(input), out)
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let out = Mat::from_elem((1, 1), self.value(input).sum());
        self.push(Op::SumAll(input), out)
    }

    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len(), "cross_entropy: target count");
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < l.ncols(), "cross_entropy: target {t} out of range");
            let row: Vec<f64> = l.row(i).to_vec();
            total += lse_skip(&row, None) - row[t];
        }
        let out = Mat::from_elem((1, 1), total / targets.len() as f64);
        self.push(Op::CrossEntropyMean { logits, targets }, out)
    }

    /// Backward pass from a scalar `[1, 1]` loss node, seeding with 1.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let v = self.value(loss);
        assert_eq!(v.shape(), [1, 1], "backward: loss must be a [1,1] scalar");
        self.backward_seeded(loss, Mat::from_elem((1, 1), 1.0), true)
    }

    /// Backward pass from any node with an explicit upstream gradient.
    ///
    /// `want_param_grads` skips accumulation into parameter gradients when the
    /// caller only needs node gradients (for example, embedding-gradient word
    /// ranking), which avoids allocating dense tables.
    pub fn backward_seeded(&self, from: NodeId, seed: Mat, want_param_grads: bool) -> Gradients {
        assert_eq!(
            seed.shape(),
            self.value(from).shape(),
            "backward: seed shape must match node output shape"
        );
        let mut node_grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        node_grads[from.0] = Some(seed);
        let mut param_grads = ParamGrads::new();

        for idx in (0..=from.0).rev() {
            let Some(grad) = node_grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Value => {}
                Op::Param(pid) => {
                    if want_param_grads {
                        match param_grads.0.get_mut(pid) {
                            Some(acc) => *acc += &grad,
                            None => {
                                param_grads.0.insert(*pid, grad.clone());
                            }
                        }
                    }
                }
                Op::GatherRows { input, indices } => {
                    let shape = self.value(*input).raw_dim();
                    let acc = grad_slot(&mut node_grads, *input, shape);
                    for (i, &r) in indices.iter().enumerate() {
                        let mut dst = acc.row_mut(r);
                        dst += &grad.row(i);
                    }
                }
                Op::Add(a, b) => {
                    add_grad(&mut node_grads, *a, &grad);
                    add_grad(&mut node_grads, *b, &grad);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut node_grads, *a, &grad);
                    sub_grad(&mut node_grads, *b, &grad);
                }
                Op::Mul(a, b) => {
                    let ga = &grad * self.value(*b);
                    let gb = &grad * self.value(*a);
                    add_grad(&mut node_grads, *a, &ga);
                    add_grad(&mut node_grads, *b, &gb);
                }
                Op::AddRow { input, row } => {
                    add_grad(&mut node_grads, *input, &grad);
                    let row_grad = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(&mut node_grads, *row, &row_grad);
                }
                Op::MulRow { input, row } => {
                    let r = self.value(*row);
                    let gin = &grad * &r.row(0);
                    add_grad(&mut node_grads, *input, &gin);
                    let grow = (&grad * self.value(*input))
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    add_grad(&mut node_grads, *row, &grow);
                }
                Op::Scale { input, factor } => {
                    let gin = &grad * *factor;
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::Matmul(a, b) => {
                    let ga = grad.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&grad);
                    add_grad(&mut node_grads, *a, &ga);
                    add_grad(&mut node_grads, *b, &gb);
                }
                Op::MatmulTransB(a, b) => {
                    let ga = grad.dot(self.value(*b));
                    let gb = grad.t().dot(self.value(*a));
                    add_grad(&mut node_grads, *a, &ga);
                    add_grad(&mut node_grads, *b, &gb);
                }
                Op::Relu(input) => {
                    let mut gin = grad.clone();
                    gin.zip_mut_with(self.value(*input), |g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::Gelu(input) => {
                    let mut gin = grad.clone();
                    gin.zip_mut_with(self.value(*input), |g, &x| *g *= gelu_prime(x));
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::SoftmaxRows(input) => {
                    let y = &self.nodes[idx].value;
                    let mut gin = grad.clone();
                    for (mut grow, yrow) in gin.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                        for (g, &yv) in grow.iter_mut().zip(yrow.iter()) {
                            *g = yv * (*g - dot);
                        }
                    }
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::LayerNormRows { input, eps } => {
                    let x = self.value(*input);
                    let xhat = &self.nodes[idx].value;
                    let n = x.ncols() as f64;
                    let mut gin = grad.clone();
                    for ((mut grow, xrow), hrow) in gin
                        .rows_mut()
                        .into_iter()
                        .zip(x.rows())
                        .zip(xhat.rows())
                    {
                        let mean = xrow.sum() / n;
                        let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let denom = (var + eps).sqrt();
                        let g_mean = grow.sum() / n;
                        let gh_mean: f64 =
                            grow.iter().zip(hrow.iter()).map(|(g, h)| g * h).sum::<f64>() / n;
                        for (g, &h) in grow.iter_mut().zip(hrow.iter()) {
                            *g = (*g - g_mean - h * gh_mean) / denom;
                        }
                    }
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::L2NormalizeRows(input) => {
                    let x = self.value(*input);
                    let y = &self.nodes[idx].value;
                    let mut gin = grad.clone();
                    for ((mut grow, xrow), yrow) in gin
                        .rows_mut()
                        .into_iter()
                        .zip(x.rows())
                        .zip(y.rows())
                    {
                        let norm = xrow
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>()
                            .sqrt()
                            .max(kernels::NORM_EPS);
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                        for (g, &yv) in grow.iter_mut().zip(yrow.iter()) {
                            *g = (*g - yv * dot) / norm;
                        }
                    }
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::Row { input, index } => {
                    let shape = self.value(*input).raw_dim();
                    let acc = grad_slot(&mut node_grads, *input, shape);
                    let mut dst = acc.row_mut(*index);
                    dst += &grad.row(0);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let piece = grad.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        add_grad(&mut node_grads, p, &piece);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        let piece = grad.slice(ndarray::s![offset..offset + h, ..]).to_owned();
                        add_grad(&mut node_grads, p, &piece);
                        offset += h;
                    }
                }
                Op::LogSumExpRowsSkipDiag(input) => {
                    let s = self.value(*input);
                    let o = &self.nodes[idx].value;
                    let n = s.nrows();
                    let mut gin = Mat::zeros((n, n));
                    for i in 0..n {
                        let gi = grad[[i, 0]];
                        if gi == 0.0 {
                            continue;
                        }
                        for k in 0..n {
                            if k != i {
                                gin[[i, k]] = gi * (s[[i, k]] - o[[i, 0]]).exp();
                            }
                        }
                    }
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::GatherEntries { input, coords } => {
                    let shape = self.value(*input).raw_dim();
                    let acc = grad_slot(&mut node_grads, *input, shape);
                    for (j, &(r, c)) in coords.iter().enumerate() {
                        acc[[r, c]] += grad[[j, 0]];
                    }
                }
                Op::MeanAll(input) => {
                    let shape = self.value(*input).raw_dim();
                    let g = grad[[0, 0]] / (shape[0] * shape[1]) as f64;
                    let gin = Mat::from_elem(shape, g);
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::SumAll(input) => {
                    let shape = self.value(*input).raw_dim();
                    let gin = Mat::from_elem(shape, grad[[0, 0]]);
                    add_grad(&mut node_grads, *input, &gin);
                }
                Op::CrossEntropyMean { logits, targets } => {
                    let g = grad[[0, 0]] / targets.len() as f64;
                    let mut gin = softmax_rows(self.value(*logits));
                    for (i, &t) in targets.iter().enumerate() {
                        gin[[i, t]] -= 1.0;
                    }
                    gin.mapv_inplace(|v| v * g);
                    add_grad(&mut node_grads, *logits, &gin);
                }
            }
            // Re-store the grad so callers can read node gradients afterwards.
            node_grads[idx] = Some(grad);
        }

        Gradients {
            node_grads,
            param_grads,
        }
    }
}

fn grad_slot<'a>(
    grads: &'a mut [Option<Mat>],
    id: NodeId,
    shape: ndarray::Ix2,
) -> &'a mut Mat {
    grads[id.0].get_or_insert_with(|| Mat::zeros(shape))
}

fn add_grad(grads: &mut [Option<Mat>], id: NodeId, delta: &Mat) {
    match &mut grads[id.0] {
        Some(acc) => *acc += delta,
        slot @ None => *slot = Some(delta.clone()),
    }
}

fn sub_grad(grads: &mut [Option<Mat>], id: NodeId, delta: &Mat) {
    match &mut grads[id.0] {
        Some(acc) => *acc -= delta,
        slot @ None => *slot = Some(-delta.clone()),
    }
}

#[cfg(test)]
mod tests;
