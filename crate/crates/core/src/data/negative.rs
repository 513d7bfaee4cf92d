//! Negative sampling over the item universe minus a consumed set.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{RecallError, Result};

#[derive(Debug, Clone)]
pub struct NegativeSampler {
    n_items: usize,
    /// Cumulative popularity weights; `None` means uniform.
    cdf: Option<Vec<f64>>,
}

impl NegativeSampler {
    pub fn uniform(n_items: usize) -> Self {
        NegativeSampler { n_items, cdf: None }
    }

    /// Popularity-weighted sampling proportional to `counts` (plus one
    /// smoothing so unseen items stay reachable).
    pub fn popularity(counts: &[usize]) -> Self {
        let mut acc = 0.0;
        let cdf = counts
            .iter()
            .map(|&c| {
                acc += c as f64 + 1.0;
                acc
            })
            .collect();
        NegativeSampler {
            n_items: counts.len(),
            cdf: Some(cdf),
        }
    }

    /// Draws `n` distinct items outside `consumed`, deterministic given the
    /// generator state. When fewer than `n` items are eligible, returns all
    /// of them in ascending index order.
    pub fn sample_negatives<R: Rng>(
        &self,
        consumed: &HashSet<usize>,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let eligible = self.n_items.saturating_sub(consumed.len());
        if eligible == 0 {
            return Err(RecallError::Domain(
                "no eligible items to sample negatives from".into(),
            ));
        }
        if eligible <= n {
            return Ok((0..self.n_items).filter(|i| !consumed.contains(i)).collect());
        }
        let mut chosen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let candidate = match &self.cdf {
                None => rng.gen_range(0..self.n_items),
                Some(cdf) => {
                    let total = *cdf.last().expect("non-empty cdf");
                    let x = rng.gen_range(0.0..total);
                    cdf.partition_point(|&edge| edge <= x)
                }
            };
            if consumed.contains(&candidate) || !chosen.insert(candidate) {
                continue;
            }
            out.push(candidate);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn returns_all_eligible_when_short() {
        let sampler = NegativeSampler::uniform(3);
        let consumed: HashSet<usize> = [0].into_iter().collect();
        let mut rng = rng_for(1, "neg");
        let got = sampler.sample_negatives(&consumed, 2, &mut rng).unwrap();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn same_seed_same_samples() {
        let sampler = NegativeSampler::uniform(100);
        let consumed: HashSet<usize> = [5, 6].into_iter().collect();
        let a = sampler
            .sample_negatives(&consumed, 10, &mut rng_for(9, "neg"))
            .unwrap();
        let b = sampler
            .sample_negatives(&consumed, 10, &mut rng_for(9, "neg"))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn never_returns_consumed_items() {
        let sampler = NegativeSampler::uniform(50);
        let consumed: HashSet<usize> = (0..25).collect();
        let mut rng = rng_for(2, "neg");
        for _ in 0..200 {
            for idx in sampler.sample_negatives(&consumed, 5, &mut rng).unwrap() {
                assert!(!consumed.contains(&idx));
            }
        }
    }

    #[test]
    fn uniform_draws_stay_within_three_sigma() {
        let sampler = NegativeSampler::uniform(20);
        let consumed: HashSet<usize> = [3].into_iter().collect();
        let mut rng = rng_for(3, "neg-uniformity");
        let draws = 10_000;
        let mut freq = vec![0usize; 20];
        for _ in 0..draws {
            let got = sampler.sample_negatives(&consumed, 1, &mut rng).unwrap();
            freq[got[0]] += 1;
        }
        assert_eq!(freq[3], 0);
        let p = 1.0 / 19.0;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &f) in freq.iter().enumerate() {
            if i == 3 {
                continue;
            }
            assert!(
                (f as f64 - expected).abs() <= 3.0 * sigma,
                "item {i}: {f} outside 3 sigma of {expected:.1}"
            );
        }
    }

    #[test]
    fn empty_universe_is_domain_error() {
        let sampler = NegativeSampler::uniform(2);
        let consumed: HashSet<usize> = [0, 1].into_iter().collect();
        assert!(sampler
            .sample_negatives(&consumed, 1, &mut rng_for(0, "neg"))
            .is_err());
    }
}
