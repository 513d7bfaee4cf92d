//! A complete model stack: actor, evaluator, and validator parameters in one
//! store, with a phase marker gating the training order.

use serde::{Deserialize, Serialize};

use crate::actor::{init_actor, ActorConfig, ActorIds};
use crate::critic::{init_evaluator, init_validator_params, CriticConfig, EvaluatorIds, ValidatorIds};
use crate::error::{RecallError, Result};
use crate::numcore::{ParamId, ParamStore};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Init,
    Pretrained,
    Validator,
    Actor,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Pretrained => "pretrain",
            Phase::Validator => "validator",
            Phase::Actor => "actor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Phase::Init),
            "pretrain" => Ok(Phase::Pretrained),
            "validator" => Ok(Phase::Validator),
            "actor" => Ok(Phase::Actor),
            other => Err(RecallError::Format(format!("unknown phase marker '{other}'"))),
        }
    }

    pub fn rank(self) -> u8 {
        match self {
            Phase::Init => 0,
            Phase::Pretrained => 1,
            Phase::Validator => 2,
            Phase::Actor => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelStack {
    pub store: ParamStore,
    pub actor_cfg: ActorConfig,
    pub critic_cfg: CriticConfig,
    pub actor: ActorIds,
    pub evaluator: EvaluatorIds,
    pub validator: ValidatorIds,
    pub vocab_size: usize,
    pub n_users: Option<usize>,
    pub n_intents: Option<usize>,
    pub phase: Phase,
}

impl ModelStack {
    pub fn init(
        actor_cfg: ActorConfig,
        critic_cfg: CriticConfig,
        vocab_size: usize,
        n_users: Option<usize>,
        n_intents: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, "model-init");
        let actor = init_actor(&mut store, &actor_cfg, vocab_size, n_users, n_intents, &mut rng)?;
        let evaluator = init_evaluator(&mut store, &critic_cfg, &actor_cfg, &mut rng)?;
        let validator = init_validator_params(&mut store, &critic_cfg, &actor_cfg, &mut rng)?;
        Ok(ModelStack {
            store,
            actor_cfg,
            critic_cfg,
            actor,
            evaluator,
            validator,
            vocab_size,
            n_users,
            n_intents,
            phase: Phase::Init,
        })
    }

    pub fn require_phase(&self, at_least: Phase, what: &str) -> Result<()> {
        if self.phase.rank() < at_least.rank() {
            return Err(RecallError::Phase(format!(
                "{what} requires phase '{}' but the stack is at '{}'",
                at_least.as_str(),
                self.phase.as_str()
            )));
        }
        Ok(())
    }

    /// Actor-owned parameters (encoders, synthesizer, embedding variants).
    pub fn actor_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("actor.").collect()
    }

    /// Actor parameters that take part in recommender pre-training: the
    /// encoders (and intent embeddings when present), not the synthesizer.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.store
            .ids_with_prefix("actor.")
            .filter(|&id| !self.store.name(id).starts_with("actor.synth."))
            .collect()
    }

    pub fn evaluator_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("evaluator.").collect()
    }

    pub fn validator_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix("validator.").collect()
    }
}
