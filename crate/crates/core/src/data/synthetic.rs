//! Synthetic corpus generation with planted topic structure.
//!
//! Items draw tokens from their topic's token pool (diluted by a shared
//! pool), users consume items mostly from one or two preferred topics, and
//! every token carries a latent vector near its topic centroid. The hidden
//! topic labels are written to a sidecar used only by test oracles; the
//! token vectors double as the "pretrained" word-vector table for the
//! averaging baseline.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::corpus::{Corpus, Item, User};
use crate::error::{RecallError, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub topics: usize,
    pub items_per_topic: usize,
    pub users: usize,
    pub history_len: usize,
    pub vocab_size: usize,
    pub tokens_per_item: usize,
    /// Fraction of a user's history drawn from her preferred topics.
    pub purity: f64,
    /// Fraction of users with a secondary topic.
    pub two_topic_fraction: f64,
    /// Fraction of an item's tokens drawn from its topic pool.
    pub token_purity: f64,
    /// Dimension of the latent token vectors.
    pub word_vector_dim: usize,
    /// Noise scale around topic centroids for token vectors.
    pub token_noise: f64,
    /// Write per-interaction intent labels equal to the consumed item's topic.
    pub with_intents: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 8,
            items_per_topic: 250,
            users: 500,
            history_len: 12,
            vocab_size: 800,
            tokens_per_item: 8,
            purity: 0.9,
            two_topic_fraction: 0.3,
            token_purity: 0.85,
            word_vector_dim: 16,
            token_noise: 0.9,
            with_intents: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(RecallError::Domain(format!("synthetic config: {msg}")))
            }
        };
        check(self.topics >= 1, "topics must be >= 1")?;
        check(self.items_per_topic >= 1, "items_per_topic must be >= 1")?;
        check(self.users >= 1, "users must be >= 1")?;
        check(self.history_len >= 1, "history_len must be >= 1")?;
        check(
            self.history_len <= self.items_per_topic * self.topics,
            "history_len exceeds item count",
        )?;
        check(self.tokens_per_item >= 1, "tokens_per_item must be >= 1")?;
        check(
            self.vocab_size >= 2 * self.topics,
            "vocab_size must allow at least two tokens per topic",
        )?;
        check(
            self.purity > 0.0 && self.purity <= 1.0,
            "purity must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.two_topic_fraction),
            "two_topic_fraction must lie in [0, 1]",
        )?;
        check(
            self.token_purity > 0.0 && self.token_purity <= 1.0,
            "token_purity must lie in (0, 1]",
        )?;
        check(self.word_vector_dim >= 1, "word_vector_dim must be >= 1")?;
        check(self.token_noise >= 0.0, "token_noise must be >= 0")?;
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.topics * self.items_per_topic
    }
}

/// Latent token vectors, keyed by token string.
#[derive(Debug, Clone)]
pub struct WordVectors {
    pub dim: usize,
    pub table: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    token: String,
    vector: Vec<f64>,
}

impl WordVectors {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.table.get(token).map(Vec::as_slice)
    }

    pub fn write_jsonl<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (token, vector) in &self.table {
            let line = serde_json::to_string(&VectorLine {
                token: token.clone(),
                vector: vector.clone(),
            })
            .expect("vector serialization");
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut table = BTreeMap::new();
        let mut dim = 0;
        for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorLine = serde_json::from_str(&line).map_err(|e| RecallError::Parse {
                line: lineno + 1,
                msg: format!("word vectors: {e}"),
            })?;
            if dim == 0 {
                dim = rec.vector.len();
            } else if rec.vector.len() != dim {
                return Err(RecallError::Parse {
                    line: lineno + 1,
                    msg: format!("vector of dim {} in a dim-{dim} table", rec.vector.len()),
                });
            }
            table.insert(rec.token, rec.vector);
        }
        if table.is_empty() {
            return Err(RecallError::Domain("empty word vector table".into()));
        }
        Ok(WordVectors { dim, table })
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub corpus: Corpus,
    /// Hidden per-item topic labels, aligned with corpus items.
    pub item_topics: Vec<usize>,
    pub word_vectors: WordVectors,
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Synthetic> {
    config.validate()?;
    let mut rng = rng_for(seed, "synthetic");
    let t = config.topics;

    // Token pools: ~30% shared, the rest split evenly across topics.
    let shared_count = (config.vocab_size * 3 / 10).max(1);
    let per_topic = ((config.vocab_size - shared_count) / t).max(1);
    let shared: Vec<String> = (0..shared_count).map(|j| format!("cw{j:04}")).collect();
    let topic_tokens: Vec<Vec<String>> = (0..t)
        .map(|topic| (0..per_topic).map(|j| format!("t{topic:02}w{j:04}")).collect())
        .collect();

    // Latent token vectors: topic tokens sit near their topic centroid,
    // shared tokens are pure noise.
    let dim = config.word_vector_dim;
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
            .collect()
    };
    let centroids: Vec<Vec<f64>> = (0..t).map(|_| gauss(&mut rng, 1.0)).collect();
    let mut table = BTreeMap::new();
    for (topic, toks) in topic_tokens.iter().enumerate() {
        for tok in toks {
            let noise = gauss(&mut rng, config.token_noise);
            let vec = centroids[topic]
                .iter()
                .zip(&noise)
                .map(|(c, n)| c + n)
                .collect();
            table.insert(tok.clone(), vec);
        }
    }
    for tok in &shared {
        table.insert(tok.clone(), gauss(&mut rng, config.token_noise));
    }
    let word_vectors = WordVectors { dim, table };

    // Items.
    let n_items = config.n_items();
    let mut items = Vec::with_capacity(n_items);
    let mut item_topics = Vec::with_capacity(n_items);
    for idx in 0..n_items {
        let topic = idx / config.items_per_topic;
        let tokens = (0..config.tokens_per_item)
            .map(|_| {
                if rng.gen::<f64>() < config.token_purity {
                    topic_tokens[topic][rng.gen_range(0..per_topic)].clone()
                } else {
                    shared[rng.gen_range(0..shared_count)].clone()
                }
            })
            .collect();
        items.push(Item {
            id: format!("item{idx:05}"),
            tokens,
        });
        item_topics.push(topic);
    }

    // Users.
    let mut users = Vec::with_capacity(config.users);
    for u in 0..config.users {
        let primary = rng.gen_range(0..t);
        let secondary = (t > 1 && rng.gen::<f64>() < config.two_topic_fraction)
            .then(|| {
                let mut s = rng.gen_range(0..t - 1);
                if s >= primary {
                    s += 1;
                }
                s
            });
        let mut consumed = HashSet::with_capacity(config.history_len);
        let mut history = Vec::with_capacity(config.history_len);
        while history.len() < config.history_len {
            let topic = if rng.gen::<f64>() < config.purity {
                match secondary {
                    Some(s) if rng.gen::<f64>() < 0.35 => s,
                    _ => primary,
                }
            } else {
                rng.gen_range(0..t)
            };
            let mut picked = None;
            for _ in 0..16 {
                let item = topic * config.items_per_topic + rng.gen_range(0..config.items_per_topic);
                if !consumed.contains(&item) {
                    picked = Some(item);
                    break;
                }
            }
            // Dense consumption of a topic can exhaust retries; fall back to
            // the first unconsumed item anywhere.
            let item = picked.unwrap_or_else(|| {
                (0..n_items).find(|i| !consumed.contains(i)).expect("history_len <= n_items")
            });
            consumed.insert(item);
            history.push(item);
        }
        let intents = config
            .with_intents
            .then(|| history.iter().map(|&i| format!("topic{}", item_topics[i])).collect());
        users.push(User {
            id: format!("user{u:04}"),
            history,
            intents,
        });
    }

    Ok(Synthetic {
        corpus: Corpus { items, users },
        item_topics,
        word_vectors,
    })
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    item: String,
    topic: usize,
}

/// Labels sidecar: `{"item": string, "topic": int}` per line.
pub fn write_labels<P: AsRef<Path>>(synthetic: &Synthetic, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (item, &topic) in synthetic.corpus.items.iter().zip(&synthetic.item_topics) {
        let line = serde_json::to_string(&LabelLine {
            item: item.id.clone(),
            topic,
        })
        .expect("label serialization");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<P: AsRef<Path>>(path: P) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelLine = serde_json::from_str(&line).map_err(|e| RecallError::Parse {
            line: lineno + 1,
            msg: format!("labels file: {e}"),
        })?;
        out.insert(rec.item, rec.topic);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_dimensions() {
        let synth = generate_synthetic(&SynthConfig::default(), 42).unwrap();
        assert_eq!(synth.corpus.items.len(), 2000);
        assert_eq!(synth.corpus.users.len(), 500);
        assert_eq!(synth.item_topics.len(), 2000);
        for user in &synth.corpus.users {
            assert_eq!(user.history.len(), 12);
            let distinct: HashSet<_> = user.history.iter().collect();
            assert_eq!(distinct.len(), user.history.len());
        }
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let cfg = SynthConfig {
            users: 40,
            items_per_topic: 30,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg, 7).unwrap();
        let b = generate_synthetic(&cfg, 7).unwrap();
        for (x, y) in a.corpus.items.iter().zip(&b.corpus.items) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.tokens, y.tokens);
        }
        for (x, y) in a.corpus.users.iter().zip(&b.corpus.users) {
            assert_eq!(x.history, y.history);
            assert_eq!(x.intents, y.intents);
        }
        for (k, v) in &a.word_vectors.table {
            assert_eq!(v, b.word_vectors.table.get(k).unwrap());
        }
    }

    #[test]
    fn purity_one_single_topic_users_stay_on_topic() {
        let cfg = SynthConfig {
            purity: 1.0,
            two_topic_fraction: 0.0,
            users: 50,
            items_per_topic: 40,
            ..SynthConfig::default()
        };
        let synth = generate_synthetic(&cfg, 3).unwrap();
        for user in &synth.corpus.users {
            let topics: HashSet<_> = user.history.iter().map(|&i| synth.item_topics[i]).collect();
            assert_eq!(topics.len(), 1, "user {} strayed from her topic", user.id);
        }
    }

    #[test]
    fn purity_one_single_topic_gives_oracle_perfect_recall() {
        // With purity 1 and the planted labels, retrieving every item of the
        // user's topic must contain all of her consumed items.
        let cfg = SynthConfig {
            purity: 1.0,
            two_topic_fraction: 0.0,
            users: 30,
            items_per_topic: 25,
            ..SynthConfig::default()
        };
        let synth = generate_synthetic(&cfg, 5).unwrap();
        for user in &synth.corpus.users {
            let topic = synth.item_topics[user.history[0]];
            let topic_items: HashSet<usize> = (0..synth.corpus.items.len())
                .filter(|&i| synth.item_topics[i] == topic)
                .collect();
            assert!(user.history.iter().all(|i| topic_items.contains(i)));
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = SynthConfig {
            purity: 0.0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad, 1).is_err());
        let bad = SynthConfig {
            purity: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad, 1).is_err());
        let bad = SynthConfig {
            topics: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad, 1).is_err());
    }
}
