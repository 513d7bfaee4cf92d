//! Corpus ingestion, vocabularies, chronological splitting, negative
//! sampling, and synthetic-corpus generation.

pub mod corpus;
pub mod negative;
pub mod split;
pub mod synthetic;
pub mod vocab;

pub use corpus::{load_corpus, tokenize, write_corpus, Corpus, Item, LoadOptions, LoadReport, User};
pub use negative::NegativeSampler;
pub use split::{split_leave_last, Split};
pub use synthetic::{generate_synthetic, read_labels, write_labels, SynthConfig, Synthetic, WordVectors};
pub use vocab::{IntentVocab, Vocabulary, OOV};

use crate::error::Result;

/// Fully encoded corpus: item token-id sequences and per-interaction intent
/// ids, ready for the encoders.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub intent_vocab: IntentVocab,
    /// Token ids per item, aligned with `corpus.items`.
    pub item_tokens: Vec<Vec<usize>>,
    /// Intent ids per user interaction; empty vec when the user has none.
    pub user_intents: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn build(corpus: Corpus, min_freq: usize) -> Result<Self> {
        let vocab = Vocabulary::build(&corpus, min_freq)?;
        let intent_vocab = IntentVocab::build(&corpus);
        let item_tokens = corpus
            .items
            .iter()
            .map(|item| vocab.encode(&item.tokens))
            .collect();
        let user_intents = corpus
            .users
            .iter()
            .map(|user| match &user.intents {
                Some(labels) => labels.iter().map(|l| intent_vocab.id(l)).collect(),
                None => Vec::new(),
            })
            .collect();
        Ok(Dataset {
            corpus,
            vocab,
            intent_vocab,
            item_tokens,
            user_intents,
        })
    }

    pub fn by_item_id(&self, id: &str) -> Option<usize> {
        self.corpus.items.iter().position(|i| i.id == id)
    }

    pub fn by_user_id(&self, id: &str) -> Option<usize> {
        self.corpus.users.iter().position(|u| u.id == id)
    }

    pub fn n_items(&self) -> usize {
        self.corpus.items.len()
    }

    pub fn n_users(&self) -> usize {
        self.corpus.users.len()
    }

    /// Intent id for a specific interaction, if the user carries intents.
    pub fn intent_at(&self, user: usize, pos: usize) -> Option<usize> {
        self.user_intents[user].get(pos).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_tokens_and_order() {
        let cfg = SynthConfig {
            users: 100,
            items_per_topic: 25,
            topics: 4,
            ..SynthConfig::default()
        };
        let synth = generate_synthetic(&cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let items_path = dir.path().join("items.jsonl");
        let users_path = dir.path().join("users.jsonl");
        write_corpus(&synth.corpus, &items_path, &users_path).unwrap();
        let (loaded, report) =
            load_corpus(&items_path, &users_path, LoadOptions::default()).unwrap();
        assert_eq!(report, LoadReport::default());
        assert_eq!(loaded.items.len(), synth.corpus.items.len());
        for (a, b) in loaded.items.iter().zip(&synth.corpus.items) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.tokens, b.tokens);
        }
        for (a, b) in loaded.users.iter().zip(&synth.corpus.users) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.history, b.history);
            assert_eq!(a.intents, b.intents);
        }
    }

    #[test]
    fn no_test_item_leaks_into_train_over_500_users() {
        let synth = generate_synthetic(&SynthConfig::default(), 23).unwrap();
        let split = split_leave_last(&synth.corpus, 1).unwrap();
        for &(u, pos) in &split.test {
            let user = &synth.corpus.users[u];
            let test_item = user.history[pos];
            let train = &user.history[..split.cutoff[u]];
            assert!(!train.contains(&test_item), "leak for user {}", user.id);
        }
        assert_eq!(split.test.len() + split.leaked_dropped, 500);
    }

    #[test]
    fn dataset_encodes_intents() {
        let cfg = SynthConfig {
            users: 10,
            items_per_topic: 20,
            topics: 3,
            with_intents: true,
            ..SynthConfig::default()
        };
        let synth = generate_synthetic(&cfg, 2).unwrap();
        let ds = Dataset::build(synth.corpus, 1).unwrap();
        assert_eq!(ds.intent_vocab.size(), 4); // 3 topics + OOV
        for u in 0..ds.n_users() {
            assert_eq!(ds.user_intents[u].len(), ds.corpus.users[u].history.len());
            assert!(ds.user_intents[u].iter().all(|&i| i != OOV));
        }
    }
}
