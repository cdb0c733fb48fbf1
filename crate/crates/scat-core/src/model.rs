//! Transformer encoder, projection head, classifier head, and masked-LM
//! provider, all built on the autodiff graph in [`crate::tensor`].
//!
//! Models are bundles of a [`ParamStore`] plus id structs that know how to
//! lay their forward pass onto a [`Graph`]. Inference helpers build a private
//! graph and return plain values; training code builds its own graph across
//! many examples and calls the same `*_graph` builders, so there is exactly
//! one forward implementation per architecture.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array1;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::special;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Mat, NodeId, ParamId, ParamStore};

/// Layer-norm epsilon used across all models.
const LN_EPS: f64 = 1e-5;

/// How initial weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Random,
    Pretrained,
}

/// Encoder architecture settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub init: InitKind,
}

impl EncoderConfig {
    /// Desk-scale preset: small enough to train on a laptop CPU.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 2,
            heads: 2,
            hidden_dim: 128,
            ff_dim: 256,
            max_len: 64,
            vocab_size,
            init: InitKind::Random,
        }
    }

    /// Full-scale preset (BERT-base shape). Weights must come from a
    /// checkpoint; this crate does not train at this scale.
    pub fn bert_base(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 12,
            heads: 12,
            hidden_dim: 768,
            ff_dim: 3072,
            max_len: 128,
            vocab_size,
            init: InitKind::Pretrained,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be ≥ 1".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be ≥ 3".into()));
        }
        if self.vocab_size <= special::COUNT {
            return Err(Error::Config(format!(
                "vocab_size must exceed the {} special tokens",
                special::COUNT
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Projection-head settings (a 2-layer MLP on the pooled state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub output_dim: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig { output_dim: 128 }
    }
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

/// Deterministic parameter initializer: each registered matrix gets its own
/// named RNG stream, so registration order never changes existing draws.
struct Init<'s> {
    store: &'s mut ParamStore,
    seed: u64,
    counter: u64,
}

impl<'s> Init<'s> {
    fn new(store: &'s mut ParamStore, seed: u64) -> Self {
        Init {
            store,
            seed,
            counter: 0,
        }
    }

    fn normal(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let mut r = rng::stream(self.seed, "init", &[self.counter]);
        self.counter += 1;
        let dist = Normal::new(0.0, 0.02).expect("valid normal");
        let m = Mat::from_shape_fn((rows, cols), |_| dist.sample(&mut r));
        self.store.add(name, m)
    }

    fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.counter += 1;
        self.store.add(name, Mat::zeros((rows, cols)))
    }

    fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.counter += 1;
        self.store.add(name, Mat::from_elem((rows, cols), 1.0))
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct HeadIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
}

#[derive(Debug, Clone)]
struct LayerIds {
    heads: Vec<HeadIds>,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Parameter ids of one transformer encoder (post-layer-norm, learned
/// positions, GELU feed-forward, first-token pooling).
#[derive(Debug, Clone)]
pub struct EncoderCore {
    pub config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    ln_emb_g: ParamId,
    ln_emb_b: ParamId,
    layers: Vec<LayerIds>,
}

/// Graph nodes produced by an encoder forward pass.
pub struct EncodeNodes {
    /// Gathered token embeddings `[L, d]` — the node whose gradient defines
    /// word importance.
    pub tok_emb: NodeId,
    /// Final hidden states `[L, d]`.
    pub states: NodeId,
    /// First-token pooled state `[1, d]`.
    pub pooled: NodeId,
}

impl EncoderCore {
    /// Register all encoder parameters into `store`.
    pub fn register(store: &mut ParamStore, config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.init == InitKind::Pretrained {
            return Err(Error::Model(
                "init = pretrained requires loading a checkpoint, not fresh registration".into(),
            ));
        }
        let d = config.hidden_dim;
        let dh = config.head_dim();
        let mut init = Init::new(store, seed);
        let tok_emb = init.normal("embedding.token", config.vocab_size, d);
        let pos_emb = init.normal("embedding.position", config.max_len, d);
        let ln_emb_g = init.ones("embedding.ln.gain", 1, d);
        let ln_emb_b = init.zeros("embedding.ln.bias", 1, d);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut heads = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                heads.push(HeadIds {
                    wq: init.normal(&format!("layer{l}.attn.head{h}.q.w"), d, dh),
                    bq: init.zeros(&format!("layer{l}.attn.head{h}.q.b"), 1, dh),
                    wk: init.normal(&format!("layer{l}.attn.head{h}.k.w"), d, dh),
                    bk: init.zeros(&format!("layer{l}.attn.head{h}.k.b"), 1, dh),
                    wv: init.normal(&format!("layer{l}.attn.head{h}.v.w"), d, dh),
                    bv: init.zeros(&format!("layer{l}.attn.head{h}.v.b"), 1, dh),
                });
            }
            layers.push(LayerIds {
                heads,
                wo: init.normal(&format!("layer{l}.attn.out.w"), d, d),
                bo: init.zeros(&format!("layer{l}.attn.out.b"), 1, d),
                ln1_g: init.ones(&format!("layer{l}.ln1.gain"), 1, d),
                ln1_b: init.zeros(&format!("layer{l}.ln1.bias"), 1, d),
                w1: init.normal(&format!("layer{l}.ff.w1"), d, config.ff_dim),
                b1: init.zeros(&format!("layer{l}.ff.b1"), 1, config.ff_dim),
                w2: init.normal(&format!("layer{l}.ff.w2"), config.ff_dim, d),
                b2: init.zeros(&format!("layer{l}.ff.b2"), 1, d),
                ln2_g: init.ones(&format!("layer{l}.ln2.gain"), 1, d),
                ln2_b: init.zeros(&format!("layer{l}.ln2.bias"), 1, d),
            });
        }
        Ok(EncoderCore {
            config: *config,
            tok_emb,
            pos_emb,
            ln_emb_g,
            ln_emb_b,
            layers,
        })
    }

    /// Rebind ids against a store that already contains the parameters (used
    /// when loading checkpoints).
    pub fn bind(store: &ParamStore, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let get = |name: &str| {
            store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut heads = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                heads.push(HeadIds {
                    wq: get(&format!("layer{l}.attn.head{h}.q.w"))?,
                    bq: get(&format!("layer{l}.attn.head{h}.q.b"))?,
                    wk: get(&format!("layer{l}.attn.head{h}.k.w"))?,
                    bk: get(&format!("layer{l}.attn.head{h}.k.b"))?,
                    wv: get(&format!("layer{l}.attn.head{h}.v.w"))?,
                    bv: get(&format!("layer{l}.attn.head{h}.v.b"))?,
                });
            }
            layers.push(LayerIds {
                heads,
                wo: get(&format!("layer{l}.attn.out.w"))?,
                bo: get(&format!("layer{l}.attn.out.b"))?,
                ln1_g: get(&format!("layer{l}.ln1.gain"))?,
                ln1_b: get(&format!("layer{l}.ln1.bias"))?,
                w1: get(&format!("layer{l}.ff.w1"))?,
                b1: get(&format!("layer{l}.ff.b1"))?,
                w2: get(&format!("layer{l}.ff.w2"))?,
                b2: get(&format!("layer{l}.ff.b2"))?,
                ln2_g: get(&format!("layer{l}.ln2.gain"))?,
                ln2_b: get(&format!("layer{l}.ln2.bias"))?,
            });
        }
        Ok(EncoderCore {
            config: *config,
            tok_emb: get("embedding.token")?,
            pos_emb: get("embedding.position")?,
            ln_emb_g: get("embedding.ln.gain")?,
            ln_emb_b: get("embedding.ln.bias")?,
            layers,
        })
    }

    pub fn token_embedding_param(&self) -> ParamId {
        self.tok_emb
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Model(format!(
                "sequence length {len} exceeds max_len {}",
                self.config.max_len
            )));
        }
        if len == 0 {
            return Err(Error::Model("cannot encode an empty sequence".into()));
        }
        Ok(())
    }

    fn layer_norm(
        &self,
        g: &mut Graph,
        x: NodeId,
        gain: ParamId,
        bias: ParamId,
    ) -> NodeId {
        let normed = g.layer_norm_rows(x, LN_EPS);
        let gain = g.param(gain);
        let bias = g.param(bias);
        let scaled = g.mul_row(normed, gain);
        g.add_row(scaled, bias)
    }

    /// Lay the full encoder forward pass for one sequence onto `g`.
    pub fn encode_graph(&self, g: &mut Graph, tokens: &[u32]) -> Result<EncodeNodes> {
        self.check_len(tokens.len())?;
        let indices: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Model(format!(
                "token id {bad} out of range for vocab {}",
                self.config.vocab_size
            )));
        }
        let tok_table = g.param(self.tok_emb);
        let tok_emb = g.gather_rows(tok_table, indices);
        let pos_table = g.param(self.pos_emb);
        let pos = g.gather_rows(pos_table, (0..tokens.len()).collect());
        let summed = g.add(tok_emb, pos);
        let mut x = self.layer_norm(g, summed, self.ln_emb_g, self.ln_emb_b);

        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        for layer in &self.layers {
            let mut head_outputs = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let q = {
                    let w = g.param(head.wq);
                    let b = g.param(head.bq);
                    let h = g.matmul(x, w);
                    g.add_row(h, b)
                };
                let k = {
                    let w = g.param(head.wk);
                    let b = g.param(head.bk);
                    let h = g.matmul(x, w);
                    g.add_row(h, b)
                };
                let v = {
                    let w = g.param(head.wv);
                    let b = g.param(head.bv);
                    let h = g.matmul(x, w);
                    g.add_row(h, b)
                };
                let scores = g.matmul_trans_b(q, k);
                let scores = g.scale(scores, scale);
                let attn = g.softmax_rows(scores);
                head_outputs.push(g.matmul(attn, v));
            }
            let ctx = if head_outputs.len() == 1 {
                head_outputs[0]
            } else {
                g.concat_cols(head_outputs)
            };
            let projected = {
                let w = g.param(layer.wo);
                let b = g.param(layer.bo);
                let h = g.matmul(ctx, w);
                g.add_row(h, b)
            };
            let res1 = g.add(x, projected);
            let attn_out = self.layer_norm(g, res1, layer.ln1_g, layer.ln1_b);

            let ff = {
                let w1 = g.param(layer.w1);
                let b1 = g.param(layer.b1);
                let h = g.matmul(attn_out, w1);
                let h = g.add_row(h, b1);
                let h = g.gelu(h);
                let w2 = g.param(layer.w2);
                let b2 = g.param(layer.b2);
                let h = g.matmul(h, w2);
                g.add_row(h, b2)
            };
            let res2 = g.add(attn_out, ff);
            x = self.layer_norm(g, res2, layer.ln2_g, layer.ln2_b);
        }

        let pooled = g.row(x, 0);
        Ok(EncodeNodes {
            tok_emb,
            states: x,
            pooled,
        })
    }

    /// Inference forward: final states and pooled vector as plain values.
    pub fn encode_values(&self, store: &ParamStore, tokens: &[u32]) -> Result<(Mat, Array1<f64>)> {
        let mut g = Graph::new(store);
        let nodes = self.encode_graph(&mut g, tokens)?;
        let states = g.value(nodes.states).clone();
        let pooled = g.value(nodes.pooled).row(0).to_owned();
        Ok((states, pooled))
    }

    /// Pooled representation only.
    pub fn pooled_value(&self, store: &ParamStore, tokens: &[u32]) -> Result<Array1<f64>> {
        Ok(self.encode_values(store, tokens)?.1)
    }

    /// Encode a batch; examples are independent, so this parallelizes across
    /// them and per-example outputs equal individual encoding exactly.
    pub fn encode_batch(
        &self,
        store: &ParamStore,
        batch: &[Vec<u32>],
    ) -> Result<Vec<(Mat, Array1<f64>)>> {
        crate::parallel::map_slice(batch, |tokens| self.encode_values(store, tokens))
            .into_iter()
            .collect()
    }

    /// Gradient of a scalar loss with respect to each position's token
    /// embedding. The closure receives the graph and the encoder's nodes and
    /// must return a `[1, 1]` loss node.
    pub fn embedding_gradient<F>(
        &self,
        store: &ParamStore,
        tokens: &[u32],
        loss: F,
    ) -> Result<Vec<Array1<f64>>>
    where
        F: FnOnce(&mut Graph, &EncodeNodes) -> Result<NodeId>,
    {
        let mut g = Graph::new(store);
        let nodes = self.encode_graph(&mut g, tokens)?;
        let loss_node = loss(&mut g, &nodes)?;
        let loss_value = g.value(loss_node);
        if loss_value.shape() != [1, 1] {
            return Err(Error::Model("loss closure must return a scalar node".into()));
        }
        if !loss_value[[0, 0]].is_finite() {
            return Err(Error::Model(format!(
                "non-finite loss {} in embedding_gradient",
                loss_value[[0, 0]]
            )));
        }
        let grads = g.backward_seeded(loss_node, Mat::from_elem((1, 1), 1.0), false);
        let d = self.config.hidden_dim;
        let out = match grads.node(nodes.tok_emb) {
            Some(grad) => {
                if grad.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Model("non-finite embedding gradient".into()));
                }
                grad.rows().into_iter().map(|r| r.to_owned()).collect()
            }
            // Loss independent of the embeddings (e.g. constant closure).
            None => vec![Array1::zeros(d); tokens.len()],
        };
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Projection head
// ---------------------------------------------------------------------------

/// 2-layer MLP projector ids.
#[derive(Debug, Clone)]
pub struct Projector {
    pub config: ProjectorConfig,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Projector {
    pub fn register(
        store: &mut ParamStore,
        hidden_dim: usize,
        config: &ProjectorConfig,
        seed: u64,
    ) -> Self {
        let mut init = Init::new(store, seed ^ 0x70726f6a);
        Projector {
            config: *config,
            w1: init.normal("projector.w1", hidden_dim, hidden_dim),
            b1: init.zeros("projector.b1", 1, hidden_dim),
            w2: init.normal("projector.w2", hidden_dim, config.output_dim),
            b2: init.zeros("projector.b2", 1, config.output_dim),
        }
    }

    pub fn bind(store: &ParamStore, config: &ProjectorConfig) -> Result<Self> {
        let get = |name: &str| {
            store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        Ok(Projector {
            config: *config,
            w1: get("projector.w1")?,
            b1: get("projector.b1")?,
            w2: get("projector.w2")?,
            b2: get("projector.b2")?,
        })
    }

    /// `z = W2·relu(W1·h + b1) + b2` over a `[B, d]` input node.
    pub fn project_graph(&self, g: &mut Graph, pooled: NodeId) -> NodeId {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let h = g.matmul(pooled, w1);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let h = g.matmul(h, w2);
        g.add_row(h, b2)
    }

    pub fn project_value(&self, store: &ParamStore, pooled: &Array1<f64>) -> Result<Array1<f64>> {
        let w1 = store.get(self.w1);
        if pooled.len() != w1.nrows() {
            return Err(Error::Model(format!(
                "projector expects {} inputs, got {}",
                w1.nrows(),
                pooled.len()
            )));
        }
        let mut g = Graph::new(store);
        let x = g.input(pooled.clone().insert_axis(ndarray::Axis(0)));
        let z = self.project_graph(&mut g, x);
        Ok(g.value(z).row(0).to_owned())
    }
}

// ---------------------------------------------------------------------------
// Model bundles
// ---------------------------------------------------------------------------

/// Encoder + projection head (the pre-training model).
#[derive(Debug)]
pub struct ScatModel {
    pub store: ParamStore,
    pub encoder: EncoderCore,
    pub projector: Projector,
}

impl ScatModel {
    pub fn new(config: &EncoderConfig, projector: &ProjectorConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = EncoderCore::register(&mut store, config, seed)?;
        let projector = Projector::register(&mut store, config.hidden_dim, projector, seed);
        Ok(ScatModel {
            store,
            encoder,
            projector,
        })
    }

    /// Projection z = g(f(tokens)) as a plain vector.
    pub fn project(&self, tokens: &[u32]) -> Result<Array1<f64>> {
        let pooled = self.encoder.pooled_value(&self.store, tokens)?;
        self.projector.project_value(&self.store, &pooled)
    }

    pub fn pooled(&self, tokens: &[u32]) -> Result<Array1<f64>> {
        self.encoder.pooled_value(&self.store, tokens)
    }

    /// Encoder forward + projection on an existing graph; returns
    /// (encode nodes, projection node `[1, proj_dim]`).
    pub fn project_graph(&self, g: &mut Graph, tokens: &[u32]) -> Result<(EncodeNodes, NodeId)> {
        let nodes = self.encoder.encode_graph(g, tokens)?;
        let z = self.projector.project_graph(g, nodes.pooled);
        Ok((nodes, z))
    }

    pub fn save(&self, path: &Path, tokenizer_ref: &str) -> Result<()> {
        let meta = serde_json::json!({
            "encoder": self.encoder.config,
            "projector": self.projector.config,
            "tokenizer_ref": tokenizer_ref,
        });
        save_checkpoint(path, "scat", &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (kind, meta, store) = load_checkpoint(path)?;
        expect_kind(path, &kind, "scat")?;
        let enc_cfg: EncoderConfig = serde_json::from_value(meta["encoder"].clone())?;
        let proj_cfg: ProjectorConfig = serde_json::from_value(meta["projector"].clone())?;
        let encoder = EncoderCore::bind(&store, &enc_cfg)?;
        let projector = Projector::bind(&store, &proj_cfg)?;
        let tokenizer_ref = meta["tokenizer_ref"].as_str().unwrap_or_default().to_string();
        Ok((
            ScatModel {
                store,
                encoder,
                projector,
            },
            tokenizer_ref,
        ))
    }
}

/// Encoder + linear classification head trained jointly (supervised baseline
/// and fine-tuning).
#[derive(Debug)]
pub struct ClassifierModel {
    pub store: ParamStore,
    pub encoder: EncoderCore,
    pub num_classes: usize,
    head_w: ParamId,
    head_b: ParamId,
}

impl ClassifierModel {
    pub fn new(config: &EncoderConfig, num_classes: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = EncoderCore::register(&mut store, config, seed)?;
        let (head_w, head_b) = register_head(&mut store, config.hidden_dim, num_classes, seed);
        Ok(ClassifierModel {
            store,
            encoder,
            num_classes,
            head_w,
            head_b,
        })
    }

    /// Start from a pre-trained encoder's weights (fine-tuning).
    pub fn from_encoder(
        encoder_store: &ParamStore,
        config: &EncoderConfig,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        // Copy encoder parameters by name, skipping any projector entries.
        let template = {
            let mut s = ParamStore::new();
            let mut fresh = *config;
            fresh.init = InitKind::Random;
            EncoderCore::register(&mut s, &fresh, 0)?;
            s
        };
        for id in template.ids() {
            let name = template.name(id);
            let src = encoder_store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing encoder parameter {name}")))?;
            store.add(name, encoder_store.get(src).clone());
        }
        let encoder = EncoderCore::bind(&store, config)?;
        let (head_w, head_b) = register_head(&mut store, config.hidden_dim, num_classes, seed);
        Ok(ClassifierModel {
            store,
            encoder,
            num_classes,
            head_w,
            head_b,
        })
    }

    /// Encoder forward + head logits on an existing graph.
    pub fn logits_graph(&self, g: &mut Graph, tokens: &[u32]) -> Result<NodeId> {
        let nodes = self.encoder.encode_graph(g, tokens)?;
        let w = g.param(self.head_w);
        let b = g.param(self.head_b);
        let logits = g.matmul(nodes.pooled, w);
        Ok(g.add_row(logits, b))
    }

    pub fn logits(&self, tokens: &[u32]) -> Result<Array1<f64>> {
        let mut g = Graph::new(&self.store);
        let node = self.logits_graph(&mut g, tokens)?;
        Ok(g.value(node).row(0).to_owned())
    }

    /// Freeze into an inference-only classifier.
    pub fn freeze(&self) -> TextClassifier {
        TextClassifier {
            store: self.store.clone(),
            encoder: self.encoder.clone(),
            head_w: self.store.get(self.head_w).clone(),
            head_b: self.store.get(self.head_b).clone(),
        }
    }

    pub fn save(&self, path: &Path, tokenizer_ref: &str) -> Result<()> {
        let meta = serde_json::json!({
            "encoder": self.encoder.config,
            "num_classes": self.num_classes,
            "tokenizer_ref": tokenizer_ref,
        });
        save_checkpoint(path, "classifier", &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (kind, meta, store) = load_checkpoint(path)?;
        expect_kind(path, &kind, "classifier")?;
        let enc_cfg: EncoderConfig = serde_json::from_value(meta["encoder"].clone())?;
        let num_classes = meta["num_classes"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing num_classes".into()))?
            as usize;
        let encoder = EncoderCore::bind(&store, &enc_cfg)?;
        let head_w = store
            .id_of("classifier.w")
            .ok_or_else(|| Error::Checkpoint("missing parameter classifier.w".into()))?;
        let head_b = store
            .id_of("classifier.b")
            .ok_or_else(|| Error::Checkpoint("missing parameter classifier.b".into()))?;
        let tokenizer_ref = meta["tokenizer_ref"].as_str().unwrap_or_default().to_string();
        Ok((
            ClassifierModel {
                store,
                encoder,
                num_classes,
                head_w,
                head_b,
            },
            tokenizer_ref,
        ))
    }
}

fn register_head(
    store: &mut ParamStore,
    hidden_dim: usize,
    num_classes: usize,
    seed: u64,
) -> (ParamId, ParamId) {
    let mut init = Init::new(store, seed ^ 0x686561_64);
    let w = init.normal("classifier.w", hidden_dim, num_classes);
    let b = init.zeros("classifier.b", 1, num_classes);
    (w, b)
}

/// Inference-only text classifier: frozen encoder + linear head values.
/// This is the victim interface the attackers query.
#[derive(Debug)]
pub struct TextClassifier {
    pub store: ParamStore,
    pub encoder: EncoderCore,
    pub head_w: Mat,
    pub head_b: Mat,
}

impl TextClassifier {
    /// Assemble from a frozen encoder and externally trained head weights
    /// (linear evaluation).
    pub fn from_parts(store: ParamStore, encoder: EncoderCore, head_w: Mat, head_b: Mat) -> Self {
        TextClassifier {
            store,
            encoder,
            head_w,
            head_b,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head_w.ncols()
    }

    pub fn pooled(&self, tokens: &[u32]) -> Result<Array1<f64>> {
        self.encoder.pooled_value(&self.store, tokens)
    }

    pub fn class_probs(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let pooled = self.pooled(tokens)?;
        let logits = pooled.dot(&self.head_w) + &self.head_b.row(0);
        Ok(crate::objective::softmax_row(logits.as_slice().unwrap()))
    }

    /// Predicted class (argmax, ties to the smaller id) plus probabilities.
    pub fn predict(&self, tokens: &[u32]) -> Result<(usize, Vec<f64>)> {
        let probs = self.class_probs(tokens)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok((best, probs))
    }

    pub fn save(&self, path: &Path, tokenizer_ref: &str) -> Result<()> {
        let mut store = self.store.clone();
        match store.id_of("classifier.w") {
            Some(id) => {
                *store.get_mut(id) = self.head_w.clone();
                let id_b = store
                    .id_of("classifier.b")
                    .ok_or_else(|| Error::Checkpoint("missing parameter classifier.b".into()))?;
                *store.get_mut(id_b) = self.head_b.clone();
            }
            None => {
                store.add("classifier.w", self.head_w.clone());
                store.add("classifier.b", self.head_b.clone());
            }
        }
        let meta = serde_json::json!({
            "encoder": self.encoder.config,
            "num_classes": self.num_classes(),
            "tokenizer_ref": tokenizer_ref,
        });
        save_checkpoint(path, "classifier", &meta, &store)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (model, tokenizer_ref) = ClassifierModel::load(path)?;
        Ok((model.freeze(), tokenizer_ref))
    }
}

// ---------------------------------------------------------------------------
// Masked language model
// ---------------------------------------------------------------------------

/// Anything that can score every vocabulary item at every position of a
/// sub-word sequence. The in-repo transformer MLM implements this; a remote
/// provider speaking the [`MlmQuery`]/[`MlmResult`] JSON protocol could too.
pub trait MlmScorer: Sync {
    fn subword_vocab_size(&self) -> usize;
    /// Logits `[L, vocab]` for the given (already complete) sequence.
    fn logits(&self, subwords: &[u32]) -> Result<Mat>;
}

/// A top-K substitution request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmQuery {
    pub subwords: Vec<u32>,
    pub positions: Vec<usize>,
}

/// One candidate token with its log-probability score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmCandidate {
    pub token: u32,
    pub score: f64,
}

/// Top-K candidates at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionCandidates {
    pub position: usize,
    pub candidates: Vec<MlmCandidate>,
}

/// Response to an [`MlmQuery`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmResult {
    pub positions: Vec<PositionCandidates>,
}

/// Whether top-K queries see the original sequence or mask each target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlmQueryMode {
    /// Feed the unmasked sequence once (default; the convention of
    /// MLM-based attack candidate generation).
    Unmasked,
    /// Mask each target position in turn (one forward per position).
    MaskedEach,
}

/// Top-K vocabulary candidates at each queried position, sorted by
/// descending log-probability with ties broken by ascending token id.
pub fn mlm_top_k(
    scorer: &dyn MlmScorer,
    query: &MlmQuery,
    k: usize,
    mode: MlmQueryMode,
) -> Result<MlmResult> {
    let vocab = scorer.subword_vocab_size();
    if k == 0 {
        return Err(Error::Model("top-K requires K ≥ 1".into()));
    }
    if k > vocab {
        return Err(Error::Model(format!(
            "K = {k} exceeds sub-word vocabulary size {vocab}"
        )));
    }
    for &p in &query.positions {
        if p >= query.subwords.len() {
            return Err(Error::Model(format!(
                "query position {p} out of bounds for length {}",
                query.subwords.len()
            )));
        }
    }
    let full_logits = match mode {
        MlmQueryMode::Unmasked => Some(scorer.logits(&query.subwords)?),
        MlmQueryMode::MaskedEach => None,
    };
    let mut positions = Vec::with_capacity(query.positions.len());
    for &p in &query.positions {
        let row: Vec<f64> = match (&full_logits, mode) {
            (Some(l), _) => l.row(p).to_vec(),
            (None, MlmQueryMode::MaskedEach) => {
                let mut masked = query.subwords.clone();
                masked[p] = special::MASK;
                scorer.logits(&masked)?.row(p).to_vec()
            }
            _ => unreachable!(),
        };
        let log_probs = crate::objective::log_softmax_row(&row);
        let mut scored: Vec<MlmCandidate> = log_probs
            .iter()
            .enumerate()
            .map(|(token, &score)| MlmCandidate {
                token: token as u32,
                score,
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.token.cmp(&b.token))
        });
        scored.truncate(k);
        positions.push(PositionCandidates {
            position: p,
            candidates: scored,
        });
    }
    Ok(MlmResult { positions })
}

/// Pseudo-perplexity: exp of the mean negative log-probability of each token
/// given the rest, masking one position at a time.
pub fn pseudo_perplexity(scorer: &dyn MlmScorer, subwords: &[u32]) -> Result<f64> {
    let all: Vec<usize> = (0..subwords.len()).collect();
    span_pseudo_perplexity(scorer, subwords, &all)
}

/// Pseudo-perplexity restricted to `positions`: exp of the mean negative
/// log-probability of the tokens at those positions, each masked in turn with
/// the rest of the sequence intact. With all positions this is the full
/// [`pseudo_perplexity`]; with a word's sub-word span it scores one
/// substitution in context at span-length cost.
pub fn span_pseudo_perplexity(
    scorer: &dyn MlmScorer,
    subwords: &[u32],
    positions: &[usize],
) -> Result<f64> {
    if subwords.is_empty() || positions.is_empty() {
        return Err(Error::Model("pseudo_perplexity of an empty sequence".into()));
    }
    let mut total = 0.0;
    for &p in positions {
        if p >= subwords.len() {
            return Err(Error::Model(format!(
                "pseudo_perplexity position {p} out of bounds for length {}",
                subwords.len()
            )));
        }
        let mut masked = subwords.to_vec();
        masked[p] = special::MASK;
        let logits = scorer.logits(&masked)?;
        let row: Vec<f64> = logits.row(p).to_vec();
        let log_probs = crate::objective::log_softmax_row(&row);
        total -= log_probs[subwords[p] as usize];
    }
    Ok((total / positions.len() as f64).exp())
}

/// Ids of the masked-LM output head (transform + layer norm + tied output).
#[derive(Debug, Clone)]
pub struct MlmHead {
    wt: ParamId,
    bt: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    out_bias: ParamId,
}

/// Transformer masked LM: encoder plus an output head tied to the token
/// embedding matrix.
#[derive(Debug)]
pub struct MlmModel {
    pub store: ParamStore,
    pub encoder: EncoderCore,
    head: MlmHead,
}

impl MlmModel {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = EncoderCore::register(&mut store, config, seed)?;
        let head = Self::register_head(&mut store, config, seed);
        Ok(MlmModel {
            store,
            encoder,
            head,
        })
    }

    fn register_head(store: &mut ParamStore, config: &EncoderConfig, seed: u64) -> MlmHead {
        let d = config.hidden_dim;
        let mut init = Init::new(store, seed ^ 0x6d6c6d);
        MlmHead {
            wt: init.normal("mlm.transform.w", d, d),
            bt: init.zeros("mlm.transform.b", 1, d),
            ln_g: init.ones("mlm.ln.gain", 1, d),
            ln_b: init.zeros("mlm.ln.bias", 1, d),
            out_bias: init.zeros("mlm.out.bias", 1, config.vocab_size),
        }
    }

    /// Full-vocabulary logits at every position, on an existing graph.
    pub fn logits_graph(&self, g: &mut Graph, tokens: &[u32]) -> Result<NodeId> {
        let nodes = self.encoder.encode_graph(g, tokens)?;
        let wt = g.param(self.head.wt);
        let bt = g.param(self.head.bt);
        let h = g.matmul(nodes.states, wt);
        let h = g.add_row(h, bt);
        let h = g.gelu(h);
        let normed = g.layer_norm_rows(h, LN_EPS);
        let gain = g.param(self.head.ln_g);
        let bias = g.param(self.head.ln_b);
        let h = g.mul_row(normed, gain);
        let h = g.add_row(h, bias);
        let emb = g.param(self.encoder.token_embedding_param());
        let logits = g.matmul_trans_b(h, emb);
        let ob = g.param(self.head.out_bias);
        Ok(g.add_row(logits, ob))
    }

    pub fn save(&self, path: &Path, tokenizer_ref: &str) -> Result<()> {
        let meta = serde_json::json!({
            "encoder": self.encoder.config,
            "tokenizer_ref": tokenizer_ref,
        });
        save_checkpoint(path, "mlm", &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (kind, meta, store) = load_checkpoint(path)?;
        expect_kind(path, &kind, "mlm")?;
        let enc_cfg: EncoderConfig = serde_json::from_value(meta["encoder"].clone())?;
        let encoder = EncoderCore::bind(&store, &enc_cfg)?;
        let get = |name: &str| {
            store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let head = MlmHead {
            wt: get("mlm.transform.w")?,
            bt: get("mlm.transform.b")?,
            ln_g: get("mlm.ln.gain")?,
            ln_b: get("mlm.ln.bias")?,
            out_bias: get("mlm.out.bias")?,
        };
        let tokenizer_ref = meta["tokenizer_ref"].as_str().unwrap_or_default().to_string();
        Ok((
            MlmModel {
                store,
                encoder,
                head,
            },
            tokenizer_ref,
        ))
    }
}

impl MlmScorer for MlmModel {
    fn subword_vocab_size(&self) -> usize {
        self.encoder.config.vocab_size
    }

    fn logits(&self, subwords: &[u32]) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let node = self.logits_graph(&mut g, subwords)?;
        Ok(g.value(node).clone())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"SCATCKPT";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Hex SHA-256 over parameter bytes in registration order; cheap identity
/// check for freeze contracts and determinism tests.
pub fn weight_hash(store: &ParamStore) -> String {
    let mut hasher = Sha256::new();
    for id in store.ids() {
        hasher.update(store.name(id).as_bytes());
        let m = store.get(id);
        let mut buf = vec![0u8; m.len() * 8];
        for (i, v) in m.iter().enumerate() {
            LittleEndian::write_f64(&mut buf[i * 8..i * 8 + 8], *v);
        }
        hasher.update(&buf);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write a versioned, integrity-checked checkpoint.
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    meta: &serde_json::Value,
    store: &ParamStore,
) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        meta: meta.clone(),
        params: store
            .ids()
            .map(|id| {
                let m = store.get(id);
                ParamEntry {
                    name: store.name(id).to_string(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                }
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let mut word = [0u8; 4];
    LittleEndian::write_u32(&mut word, CHECKPOINT_VERSION);
    out.extend_from_slice(&word);
    let mut len = [0u8; 8];
    LittleEndian::write_u64(&mut len, header_bytes.len() as u64);
    out.extend_from_slice(&len);
    out.extend_from_slice(&header_bytes);
    for id in store.ids() {
        let m = store.get(id);
        let mut buf = vec![0u8; m.len() * 8];
        for (i, v) in m.iter().enumerate() {
            LittleEndian::write_f64(&mut buf[i * 8..i * 8 + 8], *v);
        }
        out.extend_from_slice(&buf);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a checkpoint, verifying magic, version, shapes, and content hash.
pub fn load_checkpoint(path: &Path) -> Result<(String, serde_json::Value, ParamStore)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = LittleEndian::read_u32(&bytes[8..12]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let body_len = bytes.len() - 32;
    let (body, stored_hash) = bytes.split_at(body_len);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_hash {
        return Err(Error::Checkpoint(format!(
            "{} failed its integrity check (corrupted file)",
            path.display()
        )));
    }
    let header_len = LittleEndian::read_u64(&bytes[12..20]) as usize;
    let header_start = 20;
    let header_end = header_start + header_len;
    if header_end > body_len {
        return Err(Error::Checkpoint("truncated checkpoint header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[header_start..header_end])?;
    let mut store = ParamStore::new();
    let mut offset = header_end;
    for entry in &header.params {
        let count = entry.rows * entry.cols;
        let end = offset + count * 8;
        if end > body_len {
            return Err(Error::Checkpoint("truncated checkpoint data".into()));
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            values.push(LittleEndian::read_f64(&bytes[offset + i * 8..offset + i * 8 + 8]));
        }
        let m = Mat::from_shape_vec((entry.rows, entry.cols), values)
            .map_err(|e| Error::Checkpoint(format!("bad shape for {}: {e}", entry.name)))?;
        store.add(&entry.name, m);
        offset = end;
    }
    if offset != body_len {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok((header.kind, header.meta, store))
}

fn expect_kind(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Checkpoint(format!(
            "{} holds a {found:?} model, expected {expected:?}",
            path.display()
        )));
    }
    Ok(())
}
