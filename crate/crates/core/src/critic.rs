//! The reward side: a pre-trained recommender scoring user interest toward a
//! (possibly virtual) item representation, a discriminator keeping retrieval
//! keys inside the distribution of real item representations, and a
//! parameter-free similarity reward anchoring keys near consumed items.
//! All three produce log-probabilities in (-inf, 0]; the compound reward is
//! their weighted sum.

use serde::{Deserialize, Serialize};

use crate::actor::ActorConfig;
use crate::error::{RecallError, Result};
use crate::numcore::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::similarity::Measure;

/// Clamp floor applied to mapped similarities before the log.
pub const SIM_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorForm {
    /// Bi-channel: weighted sum of the element-wise product of two towers.
    Bi,
    /// Fully-connected: one network over the concatenated representations.
    Fc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub similarity: Measure,
    pub evaluator: EvaluatorForm,
    pub lambda_eval: f64,
    pub lambda_val: f64,
    pub lambda_ref: f64,
    pub evaluator_hidden: usize,
    pub validator_hidden: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            similarity: Measure::Cos,
            evaluator: EvaluatorForm::Bi,
            lambda_eval: 1.0,
            lambda_val: 1.0,
            lambda_ref: 1.0,
            evaluator_hidden: 64,
            validator_hidden: 64,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.evaluator_hidden == 0 || self.validator_hidden == 0 {
            return Err(RecallError::Config("critic hidden widths must be positive".into()));
        }
        for (name, v) in [
            ("lambda_eval", self.lambda_eval),
            ("lambda_val", self.lambda_val),
            ("lambda_ref", self.lambda_ref),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(RecallError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> (f64, f64, f64) {
        (self.lambda_eval, self.lambda_val, self.lambda_ref)
    }
}

#[derive(Debug, Clone)]
pub enum EvaluatorIds {
    Bi {
        ffn1: [(ParamId, ParamId); 2],
        ffn2: [(ParamId, ParamId); 2],
        weighting: ParamId,
    },
    Fc {
        layers: [(ParamId, ParamId); 2],
    },
}

#[derive(Debug, Clone)]
pub struct ValidatorIds {
    pub layers: [(ParamId, ParamId); 3],
}

/// Registers evaluator parameters under `evaluator.`. The user channel is
/// widened by the intent dimension when the actor uses auxiliary input.
pub fn init_evaluator<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &CriticConfig,
    actor_cfg: &ActorConfig,
    rng: &mut R,
) -> Result<EvaluatorIds> {
    cfg.validate()?;
    let d = actor_cfg.d;
    let h = cfg.evaluator_hidden;
    let user_in = actor_cfg.synth_input_dim();
    match cfg.evaluator {
        EvaluatorForm::Bi => {
            let mut tower = |tag: &str, input: usize, rng: &mut R| -> Result<[(ParamId, ParamId); 2]> {
                let w0 = store.add(&format!("evaluator.{tag}.0.w"), ParamStore::init_fan_in(rng, h, input))?;
                let b0 = store.add(&format!("evaluator.{tag}.0.b"), Tensor::zeros(vec![h]))?;
                let w1 = store.add(&format!("evaluator.{tag}.1.w"), ParamStore::init_fan_in(rng, d, h))?;
                let b1 = store.add(&format!("evaluator.{tag}.1.b"), Tensor::zeros(vec![d]))?;
                Ok([(w0, b0), (w1, b1)])
            };
            let ffn1 = tower("ffn1", d, rng)?;
            let ffn2 = tower("ffn2", user_in, rng)?;
            let weighting = store.add(
                "evaluator.we",
                ParamStore::init_uniform(rng, vec![d], 1.0 / (d as f64).sqrt()),
            )?;
            Ok(EvaluatorIds::Bi {
                ffn1,
                ffn2,
                weighting,
            })
        }
        EvaluatorForm::Fc => {
            let w0 = store.add(
                "evaluator.fc.0.w",
                ParamStore::init_fan_in(rng, h, d + user_in),
            )?;
            let b0 = store.add("evaluator.fc.0.b", Tensor::zeros(vec![h]))?;
            let w1 = store.add("evaluator.fc.1.w", ParamStore::init_fan_in(rng, 1, h))?;
            let b1 = store.add("evaluator.fc.1.b", Tensor::zeros(vec![1]))?;
            Ok(EvaluatorIds::Fc {
                layers: [(w0, b0), (w1, b1)],
            })
        }
    }
}

/// Registers validator parameters under `validator.`: two ReLU layers and a
/// linear logit over d-vectors.
pub fn init_validator_params<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &CriticConfig,
    actor_cfg: &ActorConfig,
    rng: &mut R,
) -> Result<ValidatorIds> {
    let d = actor_cfg.d;
    let h = cfg.validator_hidden;
    let w0 = store.add("validator.0.w", ParamStore::init_fan_in(rng, h, d))?;
    let b0 = store.add("validator.0.b", Tensor::zeros(vec![h]))?;
    let w1 = store.add("validator.1.w", ParamStore::init_fan_in(rng, h, h))?;
    let b1 = store.add("validator.1.b", Tensor::zeros(vec![h]))?;
    let w2 = store.add("validator.2.w", ParamStore::init_fan_in(rng, 1, h))?;
    let b2 = store.add("validator.2.b", Tensor::zeros(vec![1]))?;
    Ok(ValidatorIds {
        layers: [(w0, b0), (w1, b1), (w2, b2)],
    })
}

/// Forward builder for the evaluator. A retrieval key passes through the
/// identical code path as a real item representation.
#[derive(Clone, Copy)]
pub struct EvaluatorNet<'a> {
    pub store: &'a ParamStore,
    pub ids: &'a EvaluatorIds,
    pub tracked: bool,
}

impl<'a> EvaluatorNet<'a> {
    pub fn new(store: &'a ParamStore, ids: &'a EvaluatorIds, tracked: bool) -> Self {
        EvaluatorNet { store, ids, tracked }
    }

    /// Pre-sigmoid interest logit for (item representation, user representation).
    pub fn logit(&self, g: &mut Graph, item_rep: NodeId, user_rep: NodeId) -> Result<NodeId> {
        match self.ids {
            EvaluatorIds::Bi {
                ffn1,
                ffn2,
                weighting,
            } => {
                let item_out = self.tower(g, item_rep, ffn1)?;
                let user_out = self.tower(g, user_rep, ffn2)?;
                let prod = g.mul(item_out, user_out)?;
                let we = g.param(self.store, *weighting, self.tracked);
                g.dot(we, prod)
            }
            EvaluatorIds::Fc { layers } => {
                let cat = g.concat(&[item_rep, user_rep])?;
                let (w0, b0) = layers[0];
                let w0n = g.param(self.store, w0, self.tracked);
                let b0n = g.param(self.store, b0, self.tracked);
                let hidden = g.affine(cat, w0n, b0n)?;
                let hidden = g.relu(hidden);
                let (w1, b1) = layers[1];
                let w1n = g.param(self.store, w1, self.tracked);
                let b1n = g.param(self.store, b1, self.tracked);
                let out = g.affine(hidden, w1n, b1n)?;
                Ok(g.sum(out)) // 1-vector -> scalar
            }
        }
    }

    /// Log-probability of interest, strictly below zero.
    pub fn log_prob(&self, g: &mut Graph, item_rep: NodeId, user_rep: NodeId) -> Result<NodeId> {
        let z = self.logit(g, item_rep, user_rep)?;
        Ok(g.log_sigmoid(z))
    }

    fn tower(&self, g: &mut Graph, input: NodeId, layers: &[(ParamId, ParamId); 2]) -> Result<NodeId> {
        let (w0, b0) = layers[0];
        let w0n = g.param(self.store, w0, self.tracked);
        let b0n = g.param(self.store, b0, self.tracked);
        let hidden = g.affine(input, w0n, b0n)?;
        let hidden = g.relu(hidden);
        let (w1, b1) = layers[1];
        let w1n = g.param(self.store, w1, self.tracked);
        let b1n = g.param(self.store, b1, self.tracked);
        g.affine(hidden, w1n, b1n)
    }
}

#[derive(Clone, Copy)]
pub struct ValidatorNet<'a> {
    pub store: &'a ParamStore,
    pub ids: &'a ValidatorIds,
    pub tracked: bool,
}

impl<'a> ValidatorNet<'a> {
    pub fn new(store: &'a ParamStore, ids: &'a ValidatorIds, tracked: bool) -> Self {
        ValidatorNet { store, ids, tracked }
    }

    pub fn logit(&self, g: &mut Graph, vec: NodeId) -> Result<NodeId> {
        let mut x = vec;
        for (i, &(w, b)) in self.ids.layers.iter().enumerate() {
            let wn = g.param(self.store, w, self.tracked);
            let bn = g.param(self.store, b, self.tracked);
            x = g.affine(x, wn, bn)?;
            if i + 1 < self.ids.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(g.sum(x))
    }

    /// Log-likelihood of the vector being a real item representation.
    pub fn log_prob(&self, g: &mut Graph, vec: NodeId) -> Result<NodeId> {
        let z = self.logit(g, vec)?;
        Ok(g.log_sigmoid(z))
    }
}

/// Similarity reward between the key and a candidate representation, mapped
/// into (0, 1] and floored at [`SIM_FLOOR`] before the log.
pub fn referencer(g: &mut Graph, key: NodeId, item_rep: NodeId, measure: Measure) -> Result<NodeId> {
    match measure {
        Measure::Cos => {
            let c = g.cosine(key, item_rep)?;
            let shifted = g.add_scalar(c, 1.0);
            let sim = g.scale(shifted, 0.5);
            let clamped = g.clamp(sim, SIM_FLOOR, 1.0);
            g.log(clamped)
        }
        Measure::Euc => {
            // log(1 / (1 + dist)) == -log(1 + dist); flooring the mapped
            // similarity at SIM_FLOOR caps the distance at 1/SIM_FLOOR - 1.
            let dist = g.euclidean_dist(key, item_rep)?;
            let capped = g.clamp(dist, 0.0, 1.0 / SIM_FLOOR - 1.0);
            let shifted = g.add_scalar(capped, 1.0);
            let logd = g.log(shifted)?;
            Ok(g.scale(logd, -1.0))
        }
    }
}

/// Node handles for one compound-reward evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RewardNodes {
    pub phi: NodeId,
    pub omega: NodeId,
    pub gamma: NodeId,
    pub total: NodeId,
}

/// Scalar view of a compound reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub phi: f64,
    pub omega: f64,
    pub gamma: f64,
    pub weights: (f64, f64, f64),
    pub total: f64,
}

impl RewardBreakdown {
    pub fn weighted_sum(phi: f64, omega: f64, gamma: f64, weights: (f64, f64, f64)) -> f64 {
        weights.0 * phi + weights.1 * omega + weights.2 * gamma
    }
}

/// Builds phi, omega, and gamma for (key, user, consumed candidate) and their
/// weighted total. The key plays the item role in the evaluator.
pub fn compound_reward(
    g: &mut Graph,
    evaluator: &EvaluatorNet<'_>,
    validator: &ValidatorNet<'_>,
    measure: Measure,
    weights: (f64, f64, f64),
    key: NodeId,
    user_rep: NodeId,
    candidate_rep: NodeId,
) -> Result<RewardNodes> {
    let phi = evaluator.log_prob(g, key, user_rep)?;
    let omega = validator.log_prob(g, key)?;
    let gamma = referencer(g, key, candidate_rep, measure)?;
    let pw = g.scale(phi, weights.0);
    let ow = g.scale(omega, weights.1);
    let gw = g.scale(gamma, weights.2);
    let partial = g.add(pw, ow)?;
    let total = g.add(partial, gw)?;
    Ok(RewardNodes {
        phi,
        omega,
        gamma,
        total,
    })
}

impl RewardNodes {
    pub fn breakdown(&self, g: &Graph, weights: (f64, f64, f64)) -> RewardBreakdown {
        RewardBreakdown {
            phi: g.value(self.phi).item(),
            omega: g.value(self.omega).item(),
            gamma: g.value(self.gamma).item(),
            weights,
            total: g.value(self.total).item(),
        }
    }
}
