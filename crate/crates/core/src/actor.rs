//! The generation side: item encoder, user encoder, and the key synthesizer.
//!
//! An item's token sequence becomes a d-vector through embedding lookup,
//! a 1-D convolution with ReLU, and attentive pooling against a learned
//! query. A user's history of item vectors is pooled by K attention heads,
//! concatenated, and mapped back to d. The synthesizer then translates the
//! user vector (optionally concatenated with an intent embedding) through a
//! feed-forward stack whose last layer is linear, so the resulting retrieval
//! key ranges over all of the item-representation space.

use serde::{Deserialize, Serialize};

use crate::error::{RecallError, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserEncoderMode {
    /// Multi-head attentive pooling over history item representations.
    Attentive,
    /// One embedding row per known user id.
    IdEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxMode {
    None,
    /// Per-request intent id, embedded and concatenated with the user vector.
    Intent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    /// Word embedding dimension.
    pub d_w: usize,
    /// Shared representation dimension of items, users, and keys.
    pub d: usize,
    pub conv_window: usize,
    /// Attention heads in the user encoder.
    pub heads: usize,
    /// Synthesizer depth; the last layer is linear, the rest ReLU.
    pub synth_depth: usize,
    pub user_encoder: UserEncoderMode,
    pub aux: AuxMode,
    pub aux_dim: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            d_w: 64,
            d: 64,
            conv_window: 3,
            heads: 4,
            synth_depth: 2,
            user_encoder: UserEncoderMode::Attentive,
            aux: AuxMode::None,
            aux_dim: 16,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_w == 0 || self.d == 0 {
            return Err(RecallError::Config("actor dimensions must be positive".into()));
        }
        if self.conv_window % 2 == 0 || self.conv_window == 0 {
            return Err(RecallError::Config(format!(
                "conv window {} must be odd",
                self.conv_window
            )));
        }
        if self.heads == 0 {
            return Err(RecallError::Config("heads must be >= 1".into()));
        }
        if self.synth_depth == 0 {
            return Err(RecallError::Config("synth_depth must be >= 1".into()));
        }
        if self.aux == AuxMode::Intent && self.aux_dim == 0 {
            return Err(RecallError::Config("aux_dim must be >= 1 for intent input".into()));
        }
        Ok(())
    }

    /// Input width of the synthesizer's first layer.
    pub fn synth_input_dim(&self) -> usize {
        match self.aux {
            AuxMode::None => self.d,
            AuxMode::Intent => self.d + self.aux_dim,
        }
    }
}

/// Parameter handles for one actor instance inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ActorIds {
    pub word_emb: ParamId,
    pub conv_kernels: ParamId,
    pub conv_bias: ParamId,
    pub item_query: ParamId,
    pub user_heads: ParamId,
    pub user_map_w: ParamId,
    pub user_map_b: ParamId,
    pub synth: Vec<(ParamId, ParamId)>,
    pub user_emb: Option<ParamId>,
    pub intent_emb: Option<ParamId>,
}

const EMB_SCALE: f64 = 0.05;

/// Registers all actor parameters under the `actor.` prefix.
/// `n_users` is required for the id-embedding user encoder; `n_intents`
/// (including the OOV slot) for the intent input.
pub fn init_actor<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &ActorConfig,
    vocab_size: usize,
    n_users: Option<usize>,
    n_intents: Option<usize>,
    rng: &mut R,
) -> Result<ActorIds> {
    cfg.validate()?;
    if vocab_size == 0 {
        return Err(RecallError::Config("empty vocabulary".into()));
    }
    let (w, d_w, d) = (cfg.conv_window, cfg.d_w, cfg.d);
    let word_emb = store.add(
        "actor.word_emb",
        ParamStore::init_uniform(rng, vec![vocab_size, d_w], EMB_SCALE),
    )?;
    let conv_scale = 1.0 / ((w * d_w) as f64).sqrt();
    let conv_kernels = store.add(
        "actor.conv.kernels",
        ParamStore::init_uniform(rng, vec![w, d_w, d], conv_scale),
    )?;
    let conv_bias = store.add("actor.conv.bias", Tensor::zeros(vec![d]))?;
    let item_query = store.add(
        "actor.item_query",
        ParamStore::init_uniform(rng, vec![d], EMB_SCALE),
    )?;
    let user_heads = store.add(
        "actor.user_heads",
        ParamStore::init_uniform(rng, vec![cfg.heads, d], EMB_SCALE),
    )?;
    let user_map_w = store.add(
        "actor.user_map.w",
        ParamStore::init_fan_in(rng, d, cfg.heads * d),
    )?;
    let user_map_b = store.add("actor.user_map.b", Tensor::zeros(vec![d]))?;

    let mut synth = Vec::with_capacity(cfg.synth_depth);
    let mut in_dim = cfg.synth_input_dim();
    for layer in 0..cfg.synth_depth {
        let sw = store.add(
            &format!("actor.synth.{layer}.w"),
            ParamStore::init_fan_in(rng, d, in_dim),
        )?;
        let sb = store.add(&format!("actor.synth.{layer}.b"), Tensor::zeros(vec![d]))?;
        synth.push((sw, sb));
        in_dim = d;
    }

    let user_emb = match cfg.user_encoder {
        UserEncoderMode::Attentive => None,
        UserEncoderMode::IdEmbedding => {
            let n = n_users.ok_or_else(|| {
                RecallError::Config("id-embedding user encoder needs the user count".into())
            })?;
            Some(store.add(
                "actor.user_emb",
                ParamStore::init_uniform(rng, vec![n, d], EMB_SCALE),
            )?)
        }
    };
    let intent_emb = match cfg.aux {
        AuxMode::None => None,
        AuxMode::Intent => {
            let n = n_intents.ok_or_else(|| {
                RecallError::Config("intent input needs the intent count".into())
            })?;
            Some(store.add(
                "actor.intent_emb",
                ParamStore::init_uniform(rng, vec![n.max(1), cfg.aux_dim], EMB_SCALE),
            )?)
        }
    };

    Ok(ActorIds {
        word_emb,
        conv_kernels,
        conv_bias,
        item_query,
        user_heads,
        user_map_w,
        user_map_b,
        synth,
        user_emb,
        intent_emb,
    })
}

/// Forward-pass builder over one graph. `tracked = false` freezes the actor:
/// the same math runs, but no gradient reaches its parameters.
#[derive(Clone, Copy)]
pub struct ActorNet<'a> {
    pub store: &'a ParamStore,
    pub ids: &'a ActorIds,
    pub cfg: &'a ActorConfig,
    pub tracked: bool,
}

impl<'a> ActorNet<'a> {
    pub fn new(store: &'a ParamStore, ids: &'a ActorIds, cfg: &'a ActorConfig, tracked: bool) -> Self {
        ActorNet {
            store,
            ids,
            cfg,
            tracked,
        }
    }

    /// Token sequence -> d-vector item representation.
    pub fn encode_item(&self, g: &mut Graph, tokens: &[usize]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(RecallError::Domain("cannot encode an item with no tokens".into()));
        }
        let emb = g.gather(self.store, self.ids.word_emb, tokens, self.tracked)?;
        let kernels = g.param(self.store, self.ids.conv_kernels, self.tracked);
        let bias = g.param(self.store, self.ids.conv_bias, self.tracked);
        let conv = g.conv1d(emb, kernels, bias)?;
        let hidden = g.relu(conv);
        let query = g.param(self.store, self.ids.item_query, self.tracked);
        let (_weights, pooled) = g.softmax_attention(hidden, query)?;
        Ok(pooled)
    }

    /// History of item representations -> d-vector user representation.
    pub fn encode_user(&self, g: &mut Graph, history_reps: &[NodeId]) -> Result<NodeId> {
        if history_reps.is_empty() {
            return Err(RecallError::Domain("cannot encode a user with empty history".into()));
        }
        let stacked = g.stack_rows(history_reps)?;
        let mut pooled = Vec::with_capacity(self.cfg.heads);
        for head in 0..self.cfg.heads {
            let query = g.gather_row(self.store, self.ids.user_heads, head, self.tracked)?;
            let (_w, p) = g.softmax_attention(stacked, query)?;
            pooled.push(p);
        }
        let cat = g.concat(&pooled)?;
        let w = g.param(self.store, self.ids.user_map_w, self.tracked);
        let b = g.param(self.store, self.ids.user_map_b, self.tracked);
        let mapped = g.affine(cat, w, b)?;
        Ok(g.relu(mapped))
    }

    /// Id-embedding user representation (the metric-learning variant).
    pub fn encode_user_id(&self, g: &mut Graph, user_idx: usize) -> Result<NodeId> {
        let table = self.ids.user_emb.ok_or_else(|| {
            RecallError::Config("user encoder is not in id-embedding mode".into())
        })?;
        g.gather_row(self.store, table, user_idx, self.tracked)
    }

    /// Intent embedding row; unknown intents use the OOV row.
    pub fn encode_aux(&self, g: &mut Graph, intent_id: usize) -> Result<NodeId> {
        let table = self.ids.intent_emb.ok_or_else(|| {
            RecallError::Config("auxiliary input is not enabled".into())
        })?;
        let rows = self.store.tensor(table).rows();
        let idx = if intent_id < rows { intent_id } else { crate::data::OOV };
        g.gather_row(self.store, table, idx, self.tracked)
    }

    /// User vector (plus optional aux vector) -> retrieval key.
    pub fn synthesize_key(&self, g: &mut Graph, user_vec: NodeId, aux: Option<NodeId>) -> Result<NodeId> {
        let mut x = match aux {
            Some(a) => g.concat(&[user_vec, a])?,
            None => user_vec,
        };
        let expect = self.cfg.synth_input_dim();
        if g.value(x).numel() != expect {
            return Err(RecallError::Config(format!(
                "synthesizer input dim {} does not match configured {expect}",
                g.value(x).numel()
            )));
        }
        let depth = self.ids.synth.len();
        for (layer, &(w, b)) in self.ids.synth.iter().enumerate() {
            let wn = g.param(self.store, w, self.tracked);
            let bn = g.param(self.store, b, self.tracked);
            x = g.affine(x, wn, bn)?;
            if layer + 1 < depth {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Encode a user from cached representation values instead of graph nodes.
    pub fn encode_user_from_reps(&self, g: &mut Graph, reps: &[&[f64]]) -> Result<NodeId> {
        let rows: Vec<NodeId> = reps
            .iter()
            .map(|r| g.constant(Tensor::vector(r.to_vec())))
            .collect();
        self.encode_user(g, &rows)
    }
}

/// One-shot frozen encodings of all items; row i is item i's representation.
pub fn encode_items_frozen(
    store: &ParamStore,
    ids: &ActorIds,
    cfg: &ActorConfig,
    item_tokens: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let net = ActorNet::new(store, ids, cfg, false);
    item_tokens
        .iter()
        .map(|tokens| {
            let mut g = Graph::new();
            let rep = net.encode_item(&mut g, tokens)?;
            Ok(g.value(rep).data().to_vec())
        })
        .collect()
}
