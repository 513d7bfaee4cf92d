//! Checkpoint container: magic `RCLNET01`, phase marker, a self-describing
//! stack header, a caller-supplied config echo, a metrics snapshot, then
//! named tensor sections in the shared payload format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::ActorConfig;
use crate::critic::CriticConfig;
use crate::error::{RecallError, Result};
use crate::numcore::{read_str, read_u64, write_str};
use crate::trainer::stack::{ModelStack, Phase};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RCLNET01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackHeader {
    actor: ActorConfig,
    critic: CriticConfig,
    vocab_size: usize,
    n_users: Option<usize>,
    n_intents: Option<usize>,
}

/// Sidecar strings restored alongside the parameters.
#[derive(Debug, Clone, Default)]
pub struct CheckpointInfo {
    pub phase: Phase,
    pub config_echo: String,
    pub metrics_snapshot: String,
}

pub fn save_checkpoint<P: AsRef<Path>>(
    stack: &ModelStack,
    path: P,
    config_echo: &str,
    metrics_snapshot: &str,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_str(&mut w, stack.phase.as_str())?;
    let header = StackHeader {
        actor: stack.actor_cfg.clone(),
        critic: stack.critic_cfg.clone(),
        vocab_size: stack.vocab_size,
        n_users: stack.n_users,
        n_intents: stack.n_intents,
    };
    write_str(&mut w, &serde_json::to_string(&header).expect("header serialization"))?;
    write_str(&mut w, config_echo)?;
    write_str(&mut w, metrics_snapshot)?;
    let sections = ["actor.", "evaluator.", "validator."];
    w.write_all(&(sections.len() as u64).to_le_bytes())?;
    for prefix in sections {
        write_str(&mut w, prefix.trim_end_matches('.'))?;
        stack.store.write_payload(&mut w, prefix)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(ModelStack, CheckpointInfo)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(RecallError::Format(format!(
            "bad checkpoint magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let phase = Phase::parse(&read_str(&mut r)?)?;
    let header: StackHeader = serde_json::from_str(&read_str(&mut r)?)
        .map_err(|e| RecallError::Format(format!("checkpoint header: {e}")))?;
    let config_echo = read_str(&mut r)?;
    let metrics_snapshot = read_str(&mut r)?;

    // Seed is irrelevant here: every tensor gets overwritten by the payload.
    let mut stack = ModelStack::init(
        header.actor,
        header.critic,
        header.vocab_size,
        header.n_users,
        header.n_intents,
        0,
    )?;
    let section_count = read_u64(&mut r)?;
    for _ in 0..section_count {
        let _name = read_str(&mut r)?;
        stack.store.read_payload(&mut r)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(RecallError::Format(format!(
            "{} trailing bytes after checkpoint sections",
            rest.len()
        )));
    }
    stack.phase = phase;
    Ok((
        stack,
        CheckpointInfo {
            phase,
            config_echo,
            metrics_snapshot,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::ActorConfig;
    use crate::critic::CriticConfig;

    fn tiny_stack(seed: u64) -> ModelStack {
        let actor_cfg = ActorConfig {
            d_w: 4,
            d: 4,
            conv_window: 3,
            heads: 2,
            synth_depth: 2,
            ..ActorConfig::default()
        };
        let critic_cfg = CriticConfig {
            evaluator_hidden: 5,
            validator_hidden: 5,
            ..CriticConfig::default()
        };
        ModelStack::init(actor_cfg, critic_cfg, 11, None, None, seed).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let stack = tiny_stack(77);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&stack, &p1, "{\"run\":1}", "{\"phi\":-0.5}").unwrap();
        let (restored, info) = load_checkpoint(&p1).unwrap();
        assert_eq!(info.config_echo, "{\"run\":1}");
        assert_eq!(info.metrics_snapshot, "{\"phi\":-0.5}");
        save_checkpoint(&restored, &p2, &info.config_echo, &info.metrics_snapshot).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let stack = tiny_stack(78);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        save_checkpoint(&stack, &p, "", "").unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&p, bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        std::fs::write(&p, b"NOTMAGIC").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(RecallError::Format(_))));
    }
}
