//! Metric-learning baselines. Both reuse the actor's encoder structures and
//! train against a sampled-negative ranking loss on the configured
//! similarity; the user representation doubles as the retrieval key.

use rand::seq::SliceRandom;

use crate::actor::{encode_items_frozen, ActorIds, ActorNet, AuxMode, UserEncoderMode};
use crate::actor::{init_actor, ActorConfig};
use crate::data::{Dataset, Split};
use crate::error::{RecallError, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore};
use crate::rng::rng_for;
use crate::similarity::Measure;
use crate::trainer::metrics::{EpochRow, MetricsLog};
use crate::trainer::optimizer::Optimizer;
use crate::trainer::{TrainConfig, TrainContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoTowerKind {
    Dssm,
    Cml,
}

impl TwoTowerKind {
    pub fn phase_label(self) -> &'static str {
        match self {
            TwoTowerKind::Dssm => "dssm",
            TwoTowerKind::Cml => "cml",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoTowerModel {
    pub kind: TwoTowerKind,
    pub store: ParamStore,
    pub actor_cfg: ActorConfig,
    pub actor: ActorIds,
    pub measure: Measure,
}

impl TwoTowerModel {
    pub fn item_reps(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        encode_items_frozen(&self.store, &self.actor, &self.actor_cfg, &dataset.item_tokens)
    }

    /// DSSM keys come from the history encoder; CML keys are the user's
    /// embedding row and fail for users unseen in training.
    pub fn retrieval_key(
        &self,
        user: usize,
        history: &[usize],
        item_reps: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let actor = ActorNet::new(&self.store, &self.actor, &self.actor_cfg, false);
        let mut g = Graph::new();
        let key = match self.kind {
            TwoTowerKind::Dssm => {
                if history.is_empty() {
                    return Err(RecallError::Domain("empty history for two-tower key".into()));
                }
                let reps: Vec<&[f64]> = history.iter().map(|&i| item_reps[i].as_slice()).collect();
                actor.encode_user_from_reps(&mut g, &reps)?
            }
            TwoTowerKind::Cml => actor.encode_user_id(&mut g, user)?,
        };
        Ok(g.value(key).data().to_vec())
    }
}

fn similarity_score(g: &mut Graph, measure: Measure, user: NodeId, item: NodeId) -> Result<NodeId> {
    match measure {
        Measure::Cos => g.cosine(user, item),
        Measure::Euc => {
            let dist = g.euclidean_dist(user, item)?;
            Ok(g.scale(dist, -1.0))
        }
    }
}

/// Log of the (0,1]-mapped similarity, for epoch logging.
fn log_mapped_similarity(measure: Measure, raw: f64) -> f64 {
    match measure {
        Measure::Cos => (0.5 * (1.0 + raw)).max(crate::critic::SIM_FLOOR).ln(),
        // raw = -dist, so log(1/(1+dist)) = -ln(1 + dist)
        Measure::Euc => -(-raw).ln_1p(),
    }
}

fn ranking_loss(
    g: &mut Graph,
    actor: &ActorNet<'_>,
    ds: &Dataset,
    kind: TwoTowerKind,
    measure: Measure,
    temperature: f64,
    user: usize,
    pos: usize,
    negatives: &[usize],
) -> Result<(NodeId, f64)> {
    let theta_u = match kind {
        TwoTowerKind::Dssm => {
            let history = &ds.corpus.users[user].history[..pos];
            let reps = history
                .iter()
                .map(|&i| actor.encode_item(g, &ds.item_tokens[i]))
                .collect::<Result<Vec<_>>>()?;
            actor.encode_user(g, &reps)?
        }
        TwoTowerKind::Cml => actor.encode_user_id(g, user)?,
    };
    let pos_item = ds.corpus.users[user].history[pos];
    let pos_rep = actor.encode_item(g, &ds.item_tokens[pos_item])?;
    let s_pos = similarity_score(g, measure, theta_u, pos_rep)?;
    let mut scores = vec![s_pos];
    for &neg in negatives {
        let neg_rep = actor.encode_item(g, &ds.item_tokens[neg])?;
        scores.push(similarity_score(g, measure, theta_u, neg_rep)?);
    }
    let stacked = g.concat(&scores)?;
    let scaled = g.scale(stacked, 1.0 / temperature);
    let lse = g.log_sum_exp(scaled)?;
    let pos_scaled = g.scale(s_pos, 1.0 / temperature);
    let neg_pos = g.scale(pos_scaled, -1.0);
    let loss = g.add(lse, neg_pos)?;
    Ok((loss, g.value(s_pos).item()))
}

fn train_two_tower(
    kind: TwoTowerKind,
    dataset: &Dataset,
    split: &Split,
    base_cfg: &ActorConfig,
    measure: Measure,
    config: &TrainConfig,
    seed: u64,
    log: &mut MetricsLog,
) -> Result<TwoTowerModel> {
    config.validate()?;
    let actor_cfg = ActorConfig {
        user_encoder: match kind {
            TwoTowerKind::Dssm => UserEncoderMode::Attentive,
            TwoTowerKind::Cml => UserEncoderMode::IdEmbedding,
        },
        aux: AuxMode::None,
        ..base_cfg.clone()
    };
    let mut store = ParamStore::new();
    let mut rng = rng_for(seed, &format!("{}:init", kind.phase_label()));
    let n_users = matches!(kind, TwoTowerKind::Cml).then(|| dataset.n_users());
    let actor = init_actor(&mut store, &actor_cfg, dataset.vocab.size(), n_users, None, &mut rng)?;
    let trainable: Vec<ParamId> = store
        .ids_with_prefix("actor.")
        .filter(|&id| !store.name(id).starts_with("actor.synth."))
        .collect();
    let mut opt = Optimizer::new(config.optimizer, config.lr_pretrain, kind.phase_label(), &store);

    let ctx = TrainContext::new(dataset, split, config, seed);
    let interactions = split.train_interactions();
    if interactions.is_empty() {
        return Err(RecallError::Domain("no training interactions (histories too short)".into()));
    }
    let sampler = ctx.sampler();
    let consumed = ctx.consumed_sets();
    let label = kind.phase_label();

    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=config.epochs_pretrain {
        let mut order = interactions.clone();
        order.shuffle(&mut rng_for(seed, &format!("{label}:shuffle:{epoch}")));
        let mut neg_rng = rng_for(seed, &format!("{label}:neg:{epoch}"));
        let mut sim_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            store.zero_grads();
            for &(u, pos) in batch {
                let negatives = sampler.sample_negatives(&consumed[u], config.n_neg, &mut neg_rng)?;
                let mut g = Graph::new();
                let actor_net = ActorNet::new(&store, &actor, &actor_cfg, true);
                let (loss, s_pos) = ranking_loss(
                    &mut g,
                    &actor_net,
                    dataset,
                    kind,
                    measure,
                    config.ranking_temperature,
                    u,
                    pos,
                    &negatives,
                )?;
                if !g.value(loss).item().is_finite() {
                    return Err(RecallError::Diverged {
                        phase: label.into(),
                        detail: format!("ranking loss became non-finite at epoch {epoch}"),
                    });
                }
                g.backward(loss)?;
                g.accumulate_param_grads(&mut store);
                sim_sum += log_mapped_similarity(measure, s_pos);
            }
            opt.step(&mut store, &trainable, 1.0 / batch.len() as f64)?;
        }
        let heldout = heldout_ranking_loss(&store, &actor, &actor_cfg, kind, measure, &ctx)?;
        let gamma = sim_sum / order.len() as f64;
        log.push(EpochRow {
            epoch,
            phase: label.into(),
            phi: 0.0,
            omega: 0.0,
            gamma,
            total: gamma,
            heldout_loss: heldout,
        });
        if config.patience > 0 {
            if heldout < best - 1e-9 {
                best = heldout;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    log::info!("{label} early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    Ok(TwoTowerModel {
        kind,
        store,
        actor_cfg,
        actor,
        measure,
    })
}

fn heldout_ranking_loss(
    store: &ParamStore,
    actor: &ActorIds,
    actor_cfg: &ActorConfig,
    kind: TwoTowerKind,
    measure: Measure,
    ctx: &TrainContext<'_>,
) -> Result<f64> {
    if ctx.split.test.is_empty() {
        return Ok(0.0);
    }
    let sampler = ctx.sampler();
    let consumed = ctx.consumed_sets();
    let mut rng = rng_for(ctx.seed, &format!("{}:heldout:neg", kind.phase_label()));
    let mut total = 0.0;
    for &(u, pos) in &ctx.split.test {
        let negatives = sampler.sample_negatives(&consumed[u], ctx.config.n_neg, &mut rng)?;
        let mut g = Graph::new();
        let actor_net = ActorNet::new(store, actor, actor_cfg, false);
        let (loss, _) = ranking_loss(
            &mut g,
            &actor_net,
            ctx.dataset,
            kind,
            measure,
            ctx.config.ranking_temperature,
            u,
            pos,
            &negatives,
        )?;
        total += g.value(loss).item();
    }
    Ok(total / ctx.split.test.len() as f64)
}

/// Two-tower model with the shared history encoder.
pub fn train_dssm(
    dataset: &Dataset,
    split: &Split,
    base_cfg: &ActorConfig,
    measure: Measure,
    config: &TrainConfig,
    seed: u64,
    log: &mut MetricsLog,
) -> Result<TwoTowerModel> {
    train_two_tower(TwoTowerKind::Dssm, dataset, split, base_cfg, measure, config, seed, log)
}

/// Id-embedding user tower with the shared item encoder.
pub fn train_cml(
    dataset: &Dataset,
    split: &Split,
    base_cfg: &ActorConfig,
    measure: Measure,
    config: &TrainConfig,
    seed: u64,
    log: &mut MetricsLog,
) -> Result<TwoTowerModel> {
    train_two_tower(TwoTowerKind::Cml, dataset, split, base_cfg, measure, config, seed, log)
}
