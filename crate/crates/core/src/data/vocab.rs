//! Token and intent vocabularies. Index 0 is reserved for out-of-vocabulary
//! entries in both.

use std::collections::HashMap;

use crate::data::corpus::Corpus;
use crate::error::{RecallError, Result};

pub const OOV: usize = 0;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    map: HashMap<String, usize>,
    size: usize,
}

impl Vocabulary {
    /// Tokens with frequency below `min_freq` map to OOV. Ids are assigned by
    /// descending frequency with lexicographic tie-break, starting at 1.
    pub fn build(corpus: &Corpus, min_freq: usize) -> Result<Self> {
        if min_freq < 1 {
            return Err(RecallError::Domain("min_freq must be >= 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for item in &corpus.items {
            for tok in &item.tokens {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let map = ranked
            .iter()
            .enumerate()
            .map(|(i, &(tok, _))| (tok.to_string(), i + 1))
            .collect::<HashMap<_, _>>();
        let size = map.len() + 1;
        Ok(Vocabulary { map, size })
    }

    /// Total id count including the OOV slot.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn id(&self, token: &str) -> usize {
        self.map.get(token).copied().unwrap_or(OOV)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Categorical vocabulary over per-interaction intent labels.
#[derive(Debug, Clone, Default)]
pub struct IntentVocab {
    map: HashMap<String, usize>,
}

impl IntentVocab {
    pub fn build(corpus: &Corpus) -> Self {
        let mut labels: Vec<&str> = corpus
            .users
            .iter()
            .filter_map(|u| u.intents.as_ref())
            .flatten()
            .map(String::as_str)
            .collect();
        labels.sort_unstable();
        labels.dedup();
        let map = labels
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i + 1))
            .collect();
        IntentVocab { map }
    }

    /// Distinct labels plus the OOV slot.
    pub fn size(&self) -> usize {
        self.map.len() + 1
    }

    pub fn id(&self, label: &str) -> usize {
        self.map.get(label).copied().unwrap_or(OOV)
    }
}
