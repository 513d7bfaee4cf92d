//! Chronological leave-last-n splitting with leakage screening.

use crate::data::corpus::Corpus;
use crate::error::{RecallError, Result};

/// Train/test partition over user histories. For each user, `cutoff` marks
/// the train prefix; `test` lists the evaluated (user, position) pairs.
/// Users with fewer than `n_test + 1` interactions keep everything in train
/// and are excluded from evaluation, as are test interactions whose item
/// already occurs in the same user's train prefix.
#[derive(Debug, Clone)]
pub struct Split {
    pub n_test: usize,
    pub cutoff: Vec<usize>,
    pub test: Vec<(usize, usize)>,
    pub leaked_dropped: usize,
    pub short_users: usize,
}

pub fn split_leave_last(corpus: &Corpus, n_test: usize) -> Result<Split> {
    if n_test == 0 {
        return Err(RecallError::Domain("n_test must be positive".into()));
    }
    let mut cutoff = Vec::with_capacity(corpus.users.len());
    let mut test = Vec::new();
    let mut leaked_dropped = 0;
    let mut short_users = 0;
    for (u, user) in corpus.users.iter().enumerate() {
        let len = user.history.len();
        if len < n_test + 1 {
            cutoff.push(len);
            short_users += 1;
            continue;
        }
        let cut = len - n_test;
        cutoff.push(cut);
        let train = &user.history[..cut];
        for pos in cut..len {
            if train.contains(&user.history[pos]) {
                leaked_dropped += 1;
            } else {
                test.push((u, pos));
            }
        }
    }
    Ok(Split {
        n_test,
        cutoff,
        test,
        leaked_dropped,
        short_users,
    })
}

impl Split {
    /// Training interactions: every (user, position) whose preceding train
    /// history is non-empty, i.e. positions 1..cutoff.
    pub fn train_interactions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, &cut) in self.cutoff.iter().enumerate() {
            for pos in 1..cut {
                out.push((u, pos));
            }
        }
        out
    }
}
