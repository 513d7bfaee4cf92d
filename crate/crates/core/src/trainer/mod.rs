//! Training pipeline: (1) pre-train the recommender (evaluator + encoders),
//! (2) initialize the validator against keys from the untrained synthesizer,
//! (3) train the actor on the compound reward with periodic validator
//! refresh. Also trains the two-tower and id-embedding baselines.

mod baselines;
mod checkpoint;
mod metrics;
mod optimizer;
mod stack;

pub use baselines::{train_cml, train_dssm, TwoTowerKind, TwoTowerModel};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo, CHECKPOINT_MAGIC};
pub use metrics::{EpochRow, MetricsLog, METRICS_HEADER};
pub use optimizer::{Optimizer, OptimizerKind};
pub use stack::{ModelStack, Phase};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{ActorNet, AuxMode, UserEncoderMode};
use crate::critic::{compound_reward, EvaluatorNet, RewardBreakdown, ValidatorNet};
use crate::data::{Dataset, NegativeSampler, Split, OOV};
use crate::error::{RecallError, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveStyle {
    /// -log s(z_pos) - sum log(1 - s(z_neg)).
    StandardBce,
    /// Ascent on phi_pos - sum phi_neg.
    PaperLiteral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_pretrain: f64,
    pub lr_validator: f64,
    pub lr_actor: f64,
    pub epochs_pretrain: usize,
    pub epochs_validator: usize,
    pub epochs_actor: usize,
    /// Negatives per positive interaction.
    pub n_neg: usize,
    pub batch_size: usize,
    /// Refresh the validator every this many actor epochs.
    pub validator_refresh: usize,
    pub objective: ObjectiveStyle,
    pub optimizer: OptimizerKind,
    /// Early-stop patience (epochs without held-out improvement); 0 disables.
    pub patience: usize,
    pub popularity_negatives: bool,
    /// Softmax temperature for the baselines' ranking loss.
    pub ranking_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_pretrain: 1e-3,
            lr_validator: 1e-3,
            lr_actor: 1e-3,
            epochs_pretrain: 3,
            epochs_validator: 2,
            epochs_actor: 3,
            n_neg: 4,
            batch_size: 64,
            validator_refresh: 1,
            objective: ObjectiveStyle::StandardBce,
            optimizer: OptimizerKind::Adam,
            patience: 3,
            popularity_negatives: false,
            ranking_temperature: 0.1,
        }
    }
}

impl TrainConfig {
    /// Zero learning rates are allowed: they turn every phase into an exact
    /// no-op, which the pipeline's contract relies on.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_validator", self.lr_validator),
            ("lr_actor", self.lr_actor),
            ("ranking_temperature", self.ranking_temperature),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(RecallError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.ranking_temperature == 0.0 {
            return Err(RecallError::Config("ranking_temperature must be positive".into()));
        }
        if self.n_neg == 0 {
            return Err(RecallError::Config("n_neg must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(RecallError::Config("batch_size must be >= 1".into()));
        }
        if self.validator_refresh == 0 {
            return Err(RecallError::Config("validator_refresh must be >= 1".into()));
        }
        Ok(())
    }
}

/// Shared inputs of every training phase.
pub struct TrainContext<'a> {
    pub dataset: &'a Dataset,
    pub split: &'a Split,
    pub config: &'a TrainConfig,
    pub seed: u64,
}

impl<'a> TrainContext<'a> {
    pub fn new(dataset: &'a Dataset, split: &'a Split, config: &'a TrainConfig, seed: u64) -> Self {
        TrainContext {
            dataset,
            split,
            config,
            seed,
        }
    }

    /// Per-user consumed item sets (full histories, so negatives never
    /// collide with held-out items either).
    pub fn consumed_sets(&self) -> Vec<HashSet<usize>> {
        self.dataset
            .corpus
            .users
            .iter()
            .map(|u| u.history.iter().copied().collect())
            .collect()
    }

    pub fn sampler(&self) -> NegativeSampler {
        if self.config.popularity_negatives {
            let mut counts = vec![0usize; self.dataset.n_items()];
            for (u, &cut) in self.split.cutoff.iter().enumerate() {
                for &item in &self.dataset.corpus.users[u].history[..cut] {
                    counts[item] += 1;
                }
            }
            NegativeSampler::popularity(&counts)
        } else {
            NegativeSampler::uniform(self.dataset.n_items())
        }
    }
}

// ── shared graph builders ───────────────────────────────────────────

/// User-channel representation for the evaluator / synthesizer input:
/// theta_u (attentive or id-embedding), with the intent embedding
/// concatenated when auxiliary input is enabled.
fn user_nodes(
    g: &mut Graph,
    actor: &ActorNet<'_>,
    ds: &Dataset,
    user: usize,
    history: &[usize],
    intent: Option<usize>,
) -> Result<(NodeId, Option<NodeId>)> {
    let theta_u = match actor.cfg.user_encoder {
        UserEncoderMode::Attentive => {
            let reps = history
                .iter()
                .map(|&i| actor.encode_item(g, &ds.item_tokens[i]))
                .collect::<Result<Vec<_>>>()?;
            actor.encode_user(g, &reps)?
        }
        UserEncoderMode::IdEmbedding => actor.encode_user_id(g, user)?,
    };
    let aux = match actor.cfg.aux {
        AuxMode::None => None,
        AuxMode::Intent => Some(actor.encode_aux(g, intent.unwrap_or(OOV))?),
    };
    Ok((theta_u, aux))
}

fn with_aux(g: &mut Graph, theta_u: NodeId, aux: Option<NodeId>) -> Result<NodeId> {
    match aux {
        Some(a) => g.concat(&[theta_u, a]),
        None => Ok(theta_u),
    }
}

/// Recommender loss for one interaction. Returns the loss node and the
/// positive log-probability phi.
fn recommender_loss(
    g: &mut Graph,
    actor: &ActorNet<'_>,
    evaluator: &EvaluatorNet<'_>,
    ds: &Dataset,
    user: usize,
    pos: usize,
    negatives: &[usize],
    objective: ObjectiveStyle,
) -> Result<(NodeId, f64)> {
    let history = &ds.corpus.users[user].history[..pos];
    let intent = ds.intent_at(user, pos);
    let (theta_u, aux) = user_nodes(g, actor, ds, user, history, intent)?;
    let user_in = with_aux(g, theta_u, aux)?;

    let pos_item = ds.corpus.users[user].history[pos];
    let pos_rep = actor.encode_item(g, &ds.item_tokens[pos_item])?;
    let z_pos = evaluator.logit(g, pos_rep, user_in)?;
    let phi_pos = g.log_sigmoid(z_pos);

    let mut terms = vec![phi_pos];
    for &neg in negatives {
        let neg_rep = actor.encode_item(g, &ds.item_tokens[neg])?;
        let z_neg = evaluator.logit(g, neg_rep, user_in)?;
        match objective {
            ObjectiveStyle::StandardBce => {
                // log(1 - s(z)) == log s(-z)
                let flipped = g.scale(z_neg, -1.0);
                terms.push(g.log_sigmoid(flipped));
            }
            ObjectiveStyle::PaperLiteral => {
                let phi_neg = g.log_sigmoid(z_neg);
                terms.push(g.scale(phi_neg, -1.0));
            }
        }
    }
    let mut objective_node = terms[0];
    for &t in &terms[1..] {
        objective_node = g.add(objective_node, t)?;
    }
    let loss = g.scale(objective_node, -1.0);
    Ok((loss, g.value(phi_pos).item()))
}

/// Mean held-out recommender loss over the test interactions, with
/// negatives drawn from a fixed stream so epochs are comparable.
fn heldout_recommender_loss(stack: &ModelStack, ctx: &TrainContext<'_>) -> Result<f64> {
    if ctx.split.test.is_empty() {
        return Ok(0.0);
    }
    let actor = ActorNet::new(&stack.store, &stack.actor, &stack.actor_cfg, false);
    let evaluator = EvaluatorNet::new(&stack.store, &stack.evaluator, false);
    let sampler = ctx.sampler();
    let consumed = ctx.consumed_sets();
    let mut rng = rng_for(ctx.seed, "heldout:neg");
    let mut total = 0.0;
    for &(u, pos) in &ctx.split.test {
        let negatives = sampler.sample_negatives(&consumed[u], ctx.config.n_neg, &mut rng)?;
        let mut g = Graph::new();
        let (loss, _) = recommender_loss(
            &mut g,
            &actor,
            &evaluator,
            ctx.dataset,
            u,
            pos,
            &negatives,
            ctx.config.objective,
        )?;
        total += g.value(loss).item();
    }
    Ok(total / ctx.split.test.len() as f64)
}

/// Held-out ranking accuracy of the recommender: the fraction of
/// (positive, sampled negative) pairs ranked correctly, ties at half.
pub fn heldout_auc(stack: &ModelStack, ctx: &TrainContext<'_>, negs_per_positive: usize) -> Result<f64> {
    let reps = stack.item_reps(ctx.dataset)?;
    let sampler = ctx.sampler();
    let consumed = ctx.consumed_sets();
    let mut rng = rng_for(ctx.seed, "auc:neg");
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for &(u, pos) in &ctx.split.test {
        let history = &ctx.dataset.corpus.users[u].history[..pos];
        let intent = ctx.dataset.intent_at(u, pos);
        let user_in = stack.user_channel_values(ctx.dataset, u, history, intent, &reps)?;
        let pos_item = ctx.dataset.corpus.users[u].history[pos];
        let z_pos = stack.interest_logit(&reps[pos_item], &user_in)?;
        let negatives = sampler.sample_negatives(&consumed[u], negs_per_positive, &mut rng)?;
        for neg in negatives {
            let z_neg = stack.interest_logit(&reps[neg], &user_in)?;
            if z_pos > z_neg {
                wins += 1.0;
            } else if z_pos == z_neg {
                wins += 0.5;
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(RecallError::Domain("no held-out pairs to rank".into()));
    }
    Ok(wins / pairs as f64)
}

// ── frozen-forward conveniences on the stack ────────────────────────

impl ModelStack {
    /// Frozen encodings of every item, aligned with the dataset items.
    pub fn item_reps(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        crate::actor::encode_items_frozen(&self.store, &self.actor, &self.actor_cfg, &dataset.item_tokens)
    }

    /// Frozen user-channel vector (theta_u plus intent when enabled) from
    /// cached item representations.
    pub fn user_channel_values(
        &self,
        dataset: &Dataset,
        user: usize,
        history: &[usize],
        intent: Option<usize>,
        item_reps: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let actor = ActorNet::new(&self.store, &self.actor, &self.actor_cfg, false);
        let mut g = Graph::new();
        let theta_u = match self.actor_cfg.user_encoder {
            UserEncoderMode::Attentive => {
                let reps: Vec<&[f64]> = history.iter().map(|&i| item_reps[i].as_slice()).collect();
                actor.encode_user_from_reps(&mut g, &reps)?
            }
            UserEncoderMode::IdEmbedding => actor.encode_user_id(&mut g, user)?,
        };
        let aux = match self.actor_cfg.aux {
            AuxMode::None => None,
            AuxMode::Intent => Some(actor.encode_aux(&mut g, intent.unwrap_or(OOV))?),
        };
        let out = with_aux(&mut g, theta_u, aux)?;
        let _ = dataset;
        Ok(g.value(out).data().to_vec())
    }

    /// Frozen retrieval key for a request, from cached item representations.
    pub fn retrieval_key(
        &self,
        dataset: &Dataset,
        user: usize,
        history: &[usize],
        intent: Option<usize>,
        item_reps: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        if history.is_empty() && self.actor_cfg.user_encoder == UserEncoderMode::Attentive {
            return Err(RecallError::Domain("empty history for key synthesis".into()));
        }
        let actor = ActorNet::new(&self.store, &self.actor, &self.actor_cfg, false);
        let mut g = Graph::new();
        let theta_u = match self.actor_cfg.user_encoder {
            UserEncoderMode::Attentive => {
                let reps: Vec<&[f64]> = history.iter().map(|&i| item_reps[i].as_slice()).collect();
                actor.encode_user_from_reps(&mut g, &reps)?
            }
            UserEncoderMode::IdEmbedding => actor.encode_user_id(&mut g, user)?,
        };
        let aux = match self.actor_cfg.aux {
            AuxMode::None => None,
            AuxMode::Intent => Some(actor.encode_aux(&mut g, intent.unwrap_or(OOV))?),
        };
        let key = actor.synthesize_key(&mut g, theta_u, aux)?;
        let _ = dataset;
        Ok(g.value(key).data().to_vec())
    }

    /// Frozen evaluator logit for raw representation values.
    pub fn interest_logit(&self, item_rep: &[f64], user_channel: &[f64]) -> Result<f64> {
        let evaluator = EvaluatorNet::new(&self.store, &self.evaluator, false);
        let mut g = Graph::new();
        let i = g.constant(crate::numcore::Tensor::vector(item_rep.to_vec()));
        let u = g.constant(crate::numcore::Tensor::vector(user_channel.to_vec()));
        let z = evaluator.logit(&mut g, i, u)?;
        Ok(g.value(z).item())
    }
}

// ── phase (1): recommender pre-training ─────────────────────────────

pub fn pretrain_recommender(
    stack: &mut ModelStack,
    ctx: &TrainContext<'_>,
    log: &mut MetricsLog,
) -> Result<()> {
    ctx.config.validate()?;
    if stack.phase != Phase::Init {
        return Err(RecallError::Phase(format!(
            "pre-training expects a freshly initialized stack, found phase '{}'",
            stack.phase.as_str()
        )));
    }
    let trainable: Vec<ParamId> = stack
        .encoder_params()
        .into_iter()
        .chain(stack.evaluator_params())
        .collect();
    let mut opt = Optimizer::new(ctx.config.optimizer, ctx.config.lr_pretrain, "pretrain", &stack.store);
    let interactions = ctx.split.train_interactions();
    if interactions.is_empty() {
        return Err(RecallError::Domain("no training interactions (histories too short)".into()));
    }
    let sampler = ctx.sampler();
    let consumed = ctx.consumed_sets();

    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=ctx.config.epochs_pretrain {
        let mut order = interactions.clone();
        order.shuffle(&mut rng_for(ctx.seed, &format!("pretrain:shuffle:{epoch}")));
        let mut neg_rng = rng_for(ctx.seed, &format!("pretrain:neg:{epoch}"));
        let mut phi_sum = 0.0;
        for batch in order.chunks(ctx.config.batch_size) {
            stack.store.zero_grads();
            for &(u, pos) in batch {
                let negatives = sampler.sample_negatives(&consumed[u], ctx.config.n_neg, &mut neg_rng)?;
                let mut g = Graph::new();
                let actor = ActorNet::new(&stack.store, &stack.actor, &stack.actor_cfg, true);
                let evaluator = EvaluatorNet::new(&stack.store, &stack.evaluator, true);
                let (loss, phi) = recommender_loss(
                    &mut g,
                    &actor,
                    &evaluator,
                    ctx.dataset,
                    u,
                    pos,
                    &negatives,
                    ctx.config.objective,
                )?;
                let loss_value = g.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(RecallError::Diverged {
                        phase: "pretrain".into(),
                        detail: format!("loss became non-finite at epoch {epoch}"),
                    });
                }
                g.backward(loss)?;
                g.accumulate_param_grads(&mut stack.store);
                phi_sum += phi;
            }
            opt.step(&mut stack.store, &trainable, 1.0 / batch.len() as f64)?;
        }
        let heldout = heldout_recommender_loss(stack, ctx)?;
        let phi_mean = phi_sum / order.len() as f64;
        let weights = stack.critic_cfg.weights();
        log.push(EpochRow {
            epoch,
            phase: "pretrain".into(),
            phi: phi_mean,
            omega: 0.0,
            gamma: 0.0,
            total: RewardBreakdown::weighted_sum(phi_mean, 0.0, 0.0, weights),
            heldout_loss: heldout,
        });
        if ctx.config.patience > 0 {
            if heldout < best - 1e-9 {
                best = heldout;
                stale = 0;
            } else {
                stale += 1;
                if stale >= ctx.config.patience {
                    log::info!("pretrain early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    stack.phase = Phase::Pretrained;
    Ok(())
}

// ── phase (2): validator initialization ─────────────────────────────

/// Binary discriminator training over (real, fake) vector pairs. Returns
/// held-out accuracy measured on a fixed tail split of the pairs.
pub fn train_discriminator(
    store: &mut ParamStore,
    validator: &crate::critic::ValidatorIds,
    reals: &[Vec<f64>],
    fakes: &[Vec<f64>],
    config: &TrainConfig,
    epochs: usize,
    seed: u64,
    tag: &str,
) -> Result<f64> {
    if reals.is_empty() || fakes.is_empty() {
        return Err(RecallError::Domain("discriminator needs both real and fake samples".into()));
    }
    let n = reals.len().min(fakes.len());
    let holdout = (n / 10).max(1).min(n.saturating_sub(1));
    let train_n = n - holdout;
    let trainable: Vec<ParamId> = store.ids_with_prefix("validator.").collect();
    let mut opt = Optimizer::new(config.optimizer, config.lr_validator, "validator", store);

    for epoch in 1..=epochs.max(1) {
        let mut order: Vec<usize> = (0..train_n).collect();
        order.shuffle(&mut rng_for(seed, &format!("{tag}:shuffle:{epoch}")));
        for batch in order.chunks(config.batch_size) {
            store.zero_grads();
            for &k in batch {
                let mut g = Graph::new();
                let vnet = ValidatorNet::new(store, validator, true);
                let real = g.constant(crate::numcore::Tensor::vector(reals[k].clone()));
                let fake = g.constant(crate::numcore::Tensor::vector(fakes[k].clone()));
                let z_real = vnet.logit(&mut g, real)?;
                let z_fake = vnet.logit(&mut g, fake)?;
                let lp_real = g.log_sigmoid(z_real);
                let objective = match config.objective {
                    ObjectiveStyle::StandardBce => {
                        let flipped = g.scale(z_fake, -1.0);
                        let lp_not_fake = g.log_sigmoid(flipped);
                        g.add(lp_real, lp_not_fake)?
                    }
                    ObjectiveStyle::PaperLiteral => {
                        let lp_fake = g.log_sigmoid(z_fake);
                        let neg = g.scale(lp_fake, -1.0);
                        g.add(lp_real, neg)?
                    }
                };
                let loss = g.scale(objective, -1.0);
                if !g.value(loss).item().is_finite() {
                    return Err(RecallError::Diverged {
                        phase: "validator".into(),
                        detail: "discriminator loss became non-finite".into(),
                    });
                }
                g.backward(loss)?;
                g.accumulate_param_grads(store);
            }
            opt.step(store, &trainable, 1.0 / batch.len() as f64)?;
        }
    }

    // held-out accuracy on the untouched tail pairs
    let vnet_store: &ParamStore = store;
    let mut correct = 0usize;
    for k in train_n..n {
        let mut g = Graph::new();
        let vnet = ValidatorNet::new(vnet_store, validator, false);
        let real = g.constant(crate::numcore::Tensor::vector(reals[k].clone()));
        let fake = g.constant(crate::numcore::Tensor::vector(fakes[k].clone()));
        let zr = vnet.logit(&mut g, real)?;
        let zf = vnet.logit(&mut g, fake)?;
        if g.value(zr).item() > 0.0 {
            correct += 1;
        }
        if g.value(zf).item() <= 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / (2 * holdout) as f64)
}

/// Synthesizes one key per item from a randomly sampled user-history prefix,
/// using the current (frozen) actor.
fn sample_fake_keys(
    stack: &ModelStack,
    ctx: &TrainContext<'_>,
    item_reps: &[Vec<f64>],
    count: usize,
    tag: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng_for(ctx.seed, tag);
    let n_users = ctx.dataset.n_users();
    let mut fakes = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.gen_range(0..n_users);
        let cut = ctx.split.cutoff[u].max(1);
        let prefix = rng.gen_range(1..=cut);
        let history = &ctx.dataset.corpus.users[u].history[..prefix];
        let intent = ctx.dataset.intent_at(u, prefix.saturating_sub(1));
        fakes.push(stack.retrieval_key(ctx.dataset, u, history, intent, item_reps)?);
    }
    Ok(fakes)
}

#[derive(Debug, Clone, Copy)]
pub struct ValidatorReport {
    pub heldout_accuracy: f64,
}

pub fn init_validator(
    stack: &mut ModelStack,
    ctx: &TrainContext<'_>,
    log: &mut MetricsLog,
) -> Result<ValidatorReport> {
    ctx.config.validate()?;
    stack.require_phase(Phase::Pretrained, "validator initialization")?;
    let item_reps = stack.item_reps(ctx.dataset)?;
    let fakes = sample_fake_keys(stack, ctx, &item_reps, item_reps.len(), "validator:init:fakes")?;
    let accuracy = train_discriminator(
        &mut stack.store,
        &stack.validator,
        &item_reps,
        &fakes,
        ctx.config,
        ctx.config.epochs_validator,
        ctx.seed,
        "validator:init",
    )?;
    if accuracy < 0.6 {
        log::warn!(
            "validator held-out accuracy {accuracy:.3} stays near chance; its reward will be uninformative"
        );
    }
    let omega_mean = mean_validator_logprob(stack, &fakes)?;
    let weights = stack.critic_cfg.weights();
    log.push(EpochRow {
        epoch: 0,
        phase: "validator".into(),
        phi: 0.0,
        omega: omega_mean,
        gamma: 0.0,
        total: RewardBreakdown::weighted_sum(0.0, omega_mean, 0.0, weights),
        heldout_loss: 1.0 - accuracy,
    });
    stack.phase = Phase::Validator;
    Ok(ValidatorReport {
        heldout_accuracy: accuracy,
    })
}

fn mean_validator_logprob(stack: &ModelStack, vecs: &[Vec<f64>]) -> Result<f64> {
    let vnet = ValidatorNet::new(&stack.store, &stack.validator, false);
    let mut sum = 0.0;
    for v in vecs {
        let mut g = Graph::new();
        let node = g.constant(crate::numcore::Tensor::vector(v.clone()));
        let lp = vnet.log_prob(&mut g, node)?;
        sum += g.value(lp).item();
    }
    Ok(sum / vecs.len().max(1) as f64)
}

/// One round of validator adaptation against the current key distribution.
fn refresh_validator(stack: &mut ModelStack, ctx: &TrainContext<'_>, actor_epoch: usize) -> Result<()> {
    let item_reps = stack.item_reps(ctx.dataset)?;
    let fakes = sample_fake_keys(
        stack,
        ctx,
        &item_reps,
        item_reps.len(),
        &format!("validator:refresh:{actor_epoch}"),
    )?;
    train_discriminator(
        &mut stack.store,
        &stack.validator,
        &item_reps,
        &fakes,
        ctx.config,
        1,
        ctx.seed,
        &format!("validator:refresh:{actor_epoch}"),
    )?;
    Ok(())
}

// ── phase (3): actor training on the compound reward ────────────────

pub fn train_actor(stack: &mut ModelStack, ctx: &TrainContext<'_>, log: &mut MetricsLog) -> Result<()> {
    ctx.config.validate()?;
    stack.require_phase(Phase::Validator, "actor training")?;
    let trainable = stack.actor_params();
    let mut opt = Optimizer::new(ctx.config.optimizer, ctx.config.lr_actor, "actor", &stack.store);
    let interactions = ctx.split.train_interactions();
    if interactions.is_empty() {
        return Err(RecallError::Domain("no training interactions (histories too short)".into()));
    }
    let weights = stack.critic_cfg.weights();
    let measure = stack.critic_cfg.similarity;

    for epoch in 1..=ctx.config.epochs_actor {
        let mut order = interactions.clone();
        order.shuffle(&mut rng_for(ctx.seed, &format!("actor:shuffle:{epoch}")));
        let (mut phi_sum, mut omega_sum, mut gamma_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(ctx.config.batch_size) {
            stack.store.zero_grads();
            for &(u, pos) in batch {
                let mut g = Graph::new();
                let actor = ActorNet::new(&stack.store, &stack.actor, &stack.actor_cfg, true);
                let evaluator = EvaluatorNet::new(&stack.store, &stack.evaluator, false);
                let validator = ValidatorNet::new(&stack.store, &stack.validator, false);
                let history = &ctx.dataset.corpus.users[u].history[..pos];
                let intent = ctx.dataset.intent_at(u, pos);
                let (theta_u, aux) = user_nodes(&mut g, &actor, ctx.dataset, u, history, intent)?;
                let user_in = with_aux(&mut g, theta_u, aux)?;
                let key = actor.synthesize_key(&mut g, theta_u, aux)?;
                let cand_item = ctx.dataset.corpus.users[u].history[pos];
                let cand = actor.encode_item(&mut g, &ctx.dataset.item_tokens[cand_item])?;
                let rewards =
                    compound_reward(&mut g, &evaluator, &validator, measure, weights, key, user_in, cand)?;
                let b = rewards.breakdown(&g, weights);
                if !b.total.is_finite() {
                    return Err(RecallError::Diverged {
                        phase: "actor".into(),
                        detail: format!(
                            "non-finite reward at epoch {epoch}: phi {} omega {} gamma {}",
                            b.phi, b.omega, b.gamma
                        ),
                    });
                }
                let loss = g.scale(rewards.total, -1.0);
                g.backward(loss)?;
                g.accumulate_param_grads(&mut stack.store);
                phi_sum += b.phi;
                omega_sum += b.omega;
                gamma_sum += b.gamma;
            }
            opt.step(&mut stack.store, &trainable, 1.0 / batch.len() as f64)?;
        }
        let n = order.len() as f64;
        let (phi, omega, gamma) = (phi_sum / n, omega_sum / n, gamma_sum / n);
        let heldout = -mean_heldout_reward(stack, ctx)?;
        log.push(EpochRow {
            epoch,
            phase: "actor".into(),
            phi,
            omega,
            gamma,
            total: RewardBreakdown::weighted_sum(phi, omega, gamma, weights),
            heldout_loss: heldout,
        });
        if epoch % ctx.config.validator_refresh == 0 {
            refresh_validator(stack, ctx, epoch)?;
        }
    }
    stack.phase = Phase::Actor;
    Ok(())
}

/// Mean compound reward over held-out interactions with frozen parameters.
fn mean_heldout_reward(stack: &ModelStack, ctx: &TrainContext<'_>) -> Result<f64> {
    if ctx.split.test.is_empty() {
        return Ok(0.0);
    }
    let weights = stack.critic_cfg.weights();
    let measure = stack.critic_cfg.similarity;
    let item_reps = stack.item_reps(ctx.dataset)?;
    let mut total = 0.0;
    for &(u, pos) in &ctx.split.test {
        let history = &ctx.dataset.corpus.users[u].history[..pos];
        let intent = ctx.dataset.intent_at(u, pos);
        let user_in = stack.user_channel_values(ctx.dataset, u, history, intent, &item_reps)?;
        let key = stack.retrieval_key(ctx.dataset, u, history, intent, &item_reps)?;
        let cand_item = ctx.dataset.corpus.users[u].history[pos];

        let evaluator = EvaluatorNet::new(&stack.store, &stack.evaluator, false);
        let validator = ValidatorNet::new(&stack.store, &stack.validator, false);
        let mut g = Graph::new();
        let key_n = g.constant(crate::numcore::Tensor::vector(key));
        let user_n = g.constant(crate::numcore::Tensor::vector(user_in));
        let cand_n = g.constant(crate::numcore::Tensor::vector(item_reps[cand_item].clone()));
        let rewards =
            compound_reward(&mut g, &evaluator, &validator, measure, weights, key_n, user_n, cand_n)?;
        total += g.value(rewards.total).item();
    }
    Ok(total / ctx.split.test.len() as f64)
}
