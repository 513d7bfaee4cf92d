//! Vector index over item representations with exact top-K queries and an
//! optional graph-based approximate search.
//!
//! The exact path scans all rows; below ten thousand items that is cheap and
//! keeps evaluation noise-free, so the approximate graph is only built past
//! a configurable threshold (or when forced). The graph links every node to
//! its `degree` best neighbors found by iterated neighbor-of-neighbor
//! refinement from a random seeding; queries run greedy best-first expansion
//! under a visit budget, restarting from unvisited nodes if the frontier
//! drains while budget remains.
//!
//! File format (integers little-endian): magic `RCLIDX01`, measure tag byte,
//! item count u64, dimension u64, id table (length-prefixed UTF-8), the
//! representation matrix as f64 bits, adjacency flag byte, and when present:
//! degree u64 followed by per-node neighbor lists (count u64 + entries u64).

use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RecallError, Result};
use crate::numcore::{read_str, read_u64, write_str};
use crate::rng::rng_for;
use crate::similarity::Measure;

pub const INDEX_MAGIC: &[u8; 8] = b"RCLIDX01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxMode {
    /// Build the graph only past `approx_threshold` items.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub measure: Measure,
    pub approx: ApproxMode,
    pub approx_threshold: usize,
    /// Neighbor-list degree R.
    pub degree: usize,
    /// Neighbor-of-neighbor refinement rounds.
    pub refine_iters: usize,
    /// Default node-visit budget for approximate queries.
    pub search_budget: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            measure: Measure::Cos,
            approx: ApproxMode::Auto,
            approx_threshold: 10_000,
            degree: 16,
            refine_iters: 10,
            search_budget: 500,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(RecallError::Config("index degree must be >= 1".into()));
        }
        if self.search_budget == 0 {
            return Err(RecallError::Config("search budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Immutable store of item representations plus the optional neighbor graph.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    ids: Vec<String>,
    reps: Vec<f64>,
    dim: usize,
    measure: Measure,
    graph: Option<NeighborGraph>,
    search_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NeighborGraph {
    degree: usize,
    adjacency: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub approximate: bool,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn has_graph(&self) -> bool {
        self.graph.is_some()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rep(&self, i: usize) -> &[f64] {
        &self.reps[i * self.dim..(i + 1) * self.dim]
    }

    fn check_key(&self, key: &[f64]) -> Result<()> {
        if key.len() != self.dim {
            return Err(RecallError::Dimension(format!(
                "query key dim {} does not match index dim {}",
                key.len(),
                self.dim
            )));
        }
        if self.measure == Measure::Cos && key.iter().all(|&v| v == 0.0) {
            return Err(RecallError::Domain("zero-norm key under cosine".into()));
        }
        Ok(())
    }

    /// Exact top-K by full scan. Ties order by ascending item id.
    pub fn query_exact(&self, key: &[f64], k: usize) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(RecallError::Domain("query K must be positive".into()));
        }
        self.check_key(key)?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| (self.measure.score(key, self.rep(i)), i))
            .collect();
        scored.sort_unstable_by(|a, b| {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        });
        scored.truncate(k);
        Ok(RetrievalResult {
            ids: scored.iter().map(|&(_, i)| self.ids[i].clone()).collect(),
            scores: scored.iter().map(|&(s, _)| s).collect(),
            approximate: false,
        })
    }

    /// Greedy best-first graph search within a node-visit budget. Falls back
    /// to the exact scan (with a warning) when no graph was built.
    pub fn query_approx(&self, key: &[f64], k: usize, budget: Option<usize>) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(RecallError::Domain("query K must be positive".into()));
        }
        self.check_key(key)?;
        let Some(graph) = &self.graph else {
            log::warn!("approximate query without a graph; falling back to exact scan");
            return self.query_exact(key, k);
        };
        let budget = budget.unwrap_or(self.search_budget).max(k);

        // max-heap frontier, seeded with entry points spread across the
        // index so clustered graphs are reachable from every region
        let mut visited = vec![false; self.len()];
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let entries = (budget / 16).clamp(4, 64).min(self.len());
        for e in 0..entries {
            let node = e * self.len() / entries;
            frontier.push(Scored {
                score: self.measure.score(key, self.rep(node)),
                node,
            });
        }
        let mut results: Vec<(f64, usize)> = Vec::with_capacity(budget);
        let mut next_restart = 0usize;
        let mut spent = 0usize;
        while spent < budget {
            if frontier.is_empty() {
                // restart from the lowest-index unvisited node
                while next_restart < self.len() && visited[next_restart] {
                    next_restart += 1;
                }
                if next_restart == self.len() {
                    break;
                }
                frontier.push(Scored {
                    score: self.measure.score(key, self.rep(next_restart)),
                    node: next_restart,
                });
            }
            let Some(Scored { score, node }) = frontier.pop() else {
                break;
            };
            if visited[node] {
                continue;
            }
            visited[node] = true;
            spent += 1;
            results.push((score, node));
            for &nb in &graph.adjacency[node] {
                let nb = nb as usize;
                if !visited[nb] {
                    frontier.push(Scored {
                        score: self.measure.score(key, self.rep(nb)),
                        node: nb,
                    });
                }
            }
        }
        results.sort_unstable_by(|a, b| {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        });
        results.truncate(k);
        Ok(RetrievalResult {
            ids: results.iter().map(|&(_, i)| self.ids[i].clone()).collect(),
            scores: results.iter().map(|&(s, _)| s).collect(),
            approximate: true,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&[self.measure.tag()])?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for id in &self.ids {
            write_str(&mut w, id)?;
        }
        for &v in &self.reps {
            w.write_all(&v.to_le_bytes())?;
        }
        match &self.graph {
            None => w.write_all(&[0u8])?,
            Some(g) => {
                w.write_all(&[1u8])?;
                w.write_all(&(g.degree as u64).to_le_bytes())?;
                for neighbors in &g.adjacency {
                    w.write_all(&(neighbors.len() as u64).to_le_bytes())?;
                    for &nb in neighbors {
                        w.write_all(&nb.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(RecallError::Format(format!(
                "bad index magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let measure = Measure::from_tag(tag[0])?;
        let count = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        if count == 0 || dim == 0 {
            return Err(RecallError::Format("empty index file".into()));
        }
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            ids.push(read_str(&mut r)?);
        }
        let mut reps = vec![0.0; count * dim];
        for v in &mut reps {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let graph = match flag[0] {
            0 => None,
            1 => {
                let degree = read_u64(&mut r)? as usize;
                let mut adjacency = Vec::with_capacity(count);
                for _ in 0..count {
                    let n = read_u64(&mut r)? as usize;
                    if n > degree {
                        return Err(RecallError::Format(format!(
                            "adjacency list of {n} exceeds degree {degree}"
                        )));
                    }
                    let mut neighbors = Vec::with_capacity(n);
                    for _ in 0..n {
                        let nb = read_u64(&mut r)?;
                        if nb as usize >= count {
                            return Err(RecallError::Format(format!("neighbor {nb} out of range")));
                        }
                        neighbors.push(nb);
                    }
                    adjacency.push(neighbors);
                }
                Some(NeighborGraph { degree, adjacency })
            }
            other => {
                return Err(RecallError::Format(format!("bad adjacency flag {other}")));
            }
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(RecallError::Format(format!(
                "{} trailing bytes after index payload",
                rest.len()
            )));
        }
        Ok(VectorIndex {
            ids,
            reps,
            dim,
            measure,
            graph,
            search_budget: IndexConfig::default().search_budget,
        })
    }
}

#[derive(PartialEq)]
struct Scored {
    score: f64,
    node: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds the index. Ids must be unique, representations finite and of one
/// dimension.
pub fn build_index(items: &[(String, Vec<f64>)], config: &IndexConfig) -> Result<VectorIndex> {
    config.validate()?;
    if items.is_empty() {
        return Err(RecallError::Domain("cannot build an index over zero items".into()));
    }
    let dim = items[0].1.len();
    if dim == 0 {
        return Err(RecallError::Dimension("zero-dimensional representations".into()));
    }
    let mut seen: HashSet<&str> = HashSet::with_capacity(items.len());
    let mut ids = Vec::with_capacity(items.len());
    let mut reps = Vec::with_capacity(items.len() * dim);
    for (id, rep) in items {
        if !seen.insert(id.as_str()) {
            return Err(RecallError::Domain(format!("duplicate item id '{id}' in index build")));
        }
        if rep.len() != dim {
            return Err(RecallError::Dimension(format!(
                "representation dim {} for '{id}' does not match {dim}",
                rep.len()
            )));
        }
        if rep.iter().any(|v| !v.is_finite()) {
            return Err(RecallError::Domain(format!("non-finite representation for '{id}'")));
        }
        ids.push(id.clone());
        reps.extend_from_slice(rep);
    }
    let mut index = VectorIndex {
        ids,
        reps,
        dim,
        measure: config.measure,
        graph: None,
        search_budget: config.search_budget,
    };
    let build_graph = match config.approx {
        ApproxMode::Always => true,
        ApproxMode::Never => false,
        ApproxMode::Auto => index.len() > config.approx_threshold,
    };
    if build_graph && index.len() > 1 {
        index.graph = Some(build_neighbor_graph(&index, config));
    }
    Ok(index)
}

/// Neighbor-list construction: random initial links, then `refine_iters`
/// rounds where each node considers its neighbors' neighbors (and reverse
/// links) and keeps the `degree` most similar.
fn build_neighbor_graph(index: &VectorIndex, config: &IndexConfig) -> NeighborGraph {
    let n = index.len();
    let degree = config.degree.min(n - 1);
    let mut rng = rng_for(config.seed, "index:graph");

    let mut adjacency: Vec<Vec<u64>> = Vec::with_capacity(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for node in 0..n {
        pool.shuffle(&mut rng);
        let mut picks = Vec::with_capacity(degree);
        for &cand in pool.iter() {
            if cand != node {
                picks.push(cand as u64);
                if picks.len() == degree {
                    break;
                }
            }
        }
        adjacency.push(picks);
    }

    let keep_best = |node: usize, candidates: &mut Vec<u64>| -> Vec<u64> {
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<(f64, u64)> = candidates
            .iter()
            .filter(|&&c| c as usize != node)
            .map(|&c| (index.measure.score(index.rep(node), index.rep(c as usize)), c))
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        scored.truncate(degree);
        scored.into_iter().map(|(_, c)| c).collect()
    };

    for _round in 0..config.refine_iters {
        // reverse adjacency so links propagate both ways
        let mut reverse: Vec<Vec<u64>> = vec![Vec::new(); n];
        for (node, neighbors) in adjacency.iter().enumerate() {
            for &nb in neighbors {
                reverse[nb as usize].push(node as u64);
            }
        }
        let mut changed = false;
        let mut next = Vec::with_capacity(n);
        for node in 0..n {
            let mut candidates: Vec<u64> = adjacency[node].clone();
            candidates.extend(&reverse[node]);
            for &nb in &adjacency[node] {
                candidates.extend(&adjacency[nb as usize]);
            }
            let best = keep_best(node, &mut candidates);
            if best != adjacency[node] {
                changed = true;
            }
            next.push(best);
        }
        adjacency = next;
        if !changed {
            break;
        }
    }
    NeighborGraph { degree, adjacency }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_items(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
        let mut rng = rng_for(seed, "index-test");
        (0..n)
            .map(|i| {
                let rep = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (format!("item{i:05}"), rep)
            })
            .collect()
    }

    fn exact_oracle(
        items: &[(String, Vec<f64>)],
        key: &[f64],
        k: usize,
        measure: Measure,
    ) -> Vec<(String, f64)> {
        // independent full sort over every item
        let mut all: Vec<(String, f64)> = items
            .iter()
            .map(|(id, rep)| (id.clone(), measure.score(key, rep)))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn single_item_index_returns_it() {
        let items = vec![("only".to_string(), vec![0.5, 0.5])];
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        let got = index.query_exact(&[1.0, 0.0], 3).unwrap();
        assert_eq!(got.ids, vec!["only"]);
        assert!(!got.approximate);
    }

    #[test]
    fn hand_computable_cosine_case() {
        let items = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
            ("c".to_string(), vec![-1.0, 0.0]),
        ];
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        let got = index.query_exact(&[1.0, 0.0], 2).unwrap();
        assert_eq!(got.ids, vec!["a", "b"]);
        assert_eq!(got.scores[0], 1.0);
        assert_eq!(got.scores[1], 0.5);
    }

    #[test]
    fn k_at_least_item_count_returns_full_sorted_list() {
        let items = random_items(37, 8, 1);
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        let key: Vec<f64> = vec![0.3; 8];
        let got = index.query_exact(&key, 100).unwrap();
        assert_eq!(got.ids.len(), 37);
        for w in got.scores.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn exact_matches_full_sort_oracle_across_measures() {
        for (trial, &measure) in [Measure::Cos, Measure::Euc].iter().enumerate() {
            for round in 0..50 {
                let seed = (trial * 100 + round) as u64;
                let mut rng = rng_for(seed, "oracle-round");
                let n = rng.gen_range(1..200);
                let dim = rng.gen_range(1..16);
                let k = rng.gen_range(1..=n + 3);
                let items = random_items(n, dim, seed + 7);
                let key: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let cfg = IndexConfig {
                    measure,
                    ..IndexConfig::default()
                };
                let index = build_index(&items, &cfg).unwrap();
                let got = index.query_exact(&key, k).unwrap();
                let want = exact_oracle(&items, &key, k, measure);
                assert_eq!(got.ids.len(), want.len());
                for ((gid, gs), (wid, ws)) in got.ids.iter().zip(&got.scores).zip(want.iter().map(|(i, s)| (i, s))) {
                    assert_eq!(gid, wid);
                    assert_eq!(gs, ws);
                }
            }
        }
    }

    #[test]
    fn tie_break_orders_by_ascending_id() {
        let items = vec![
            ("zz".to_string(), vec![1.0, 0.0]),
            ("aa".to_string(), vec![2.0, 0.0]),
            ("mm".to_string(), vec![3.0, 0.0]),
        ];
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        // all cosine scores equal 1.0 against the same direction
        let got = index.query_exact(&[1.0, 0.0], 3).unwrap();
        assert_eq!(got.ids, vec!["aa", "mm", "zz"]);
    }

    #[test]
    fn duplicate_ids_and_dim_mismatch_rejected() {
        let dup = vec![
            ("x".to_string(), vec![1.0]),
            ("x".to_string(), vec![2.0]),
        ];
        assert!(build_index(&dup, &IndexConfig::default()).is_err());
        let mixed = vec![
            ("x".to_string(), vec![1.0]),
            ("y".to_string(), vec![2.0, 3.0]),
        ];
        assert!(build_index(&mixed, &IndexConfig::default()).is_err());
    }

    #[test]
    fn graph_build_is_deterministic_and_degree_bounded() {
        let items = random_items(300, 8, 3);
        let cfg = IndexConfig {
            approx: ApproxMode::Always,
            degree: 8,
            ..IndexConfig::default()
        };
        let a = build_index(&items, &cfg).unwrap();
        let b = build_index(&items, &cfg).unwrap();
        let (ga, gb) = (a.graph.as_ref().unwrap(), b.graph.as_ref().unwrap());
        assert_eq!(ga, gb);
        for neighbors in &ga.adjacency {
            assert!(neighbors.len() <= 8);
        }
    }

    #[test]
    fn exhaustive_budget_recovers_exact_results() {
        let items = random_items(250, 6, 4);
        let cfg = IndexConfig {
            approx: ApproxMode::Always,
            degree: 6,
            ..IndexConfig::default()
        };
        let index = build_index(&items, &cfg).unwrap();
        let mut rng = rng_for(4, "budget-query");
        for _ in 0..20 {
            let key: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = index.query_exact(&key, 10).unwrap();
            let approx = index.query_approx(&key, 10, Some(items.len())).unwrap();
            assert!(approx.approximate);
            assert_eq!(exact.ids, approx.ids);
            assert_eq!(exact.scores, approx.scores);
        }
    }

    #[test]
    fn approx_queries_are_deterministic() {
        let items = random_items(400, 8, 5);
        let cfg = IndexConfig {
            approx: ApproxMode::Always,
            ..IndexConfig::default()
        };
        let index = build_index(&items, &cfg).unwrap();
        let key: Vec<f64> = vec![0.2; 8];
        let a = index.query_approx(&key, 10, Some(80)).unwrap();
        let b = index.query_approx(&key, 10, Some(80)).unwrap();
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn missing_graph_falls_back_to_exact() {
        let items = random_items(50, 4, 6);
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        assert!(!index.has_graph());
        let got = index.query_approx(&[0.1, 0.2, 0.3, 0.4], 5, None).unwrap();
        assert!(!got.approximate);
    }

    #[test]
    fn save_load_round_trip_preserves_queries_and_bytes() {
        let items = random_items(120, 5, 7);
        let cfg = IndexConfig {
            approx: ApproxMode::Always,
            degree: 5,
            ..IndexConfig::default()
        };
        let index = build_index(&items, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.idx");
        let p2 = dir.path().join("b.idx");
        index.save(&p1).unwrap();
        let loaded = VectorIndex::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let key = vec![0.4, -0.1, 0.2, 0.9, -0.3];
        let before = index.query_exact(&key, 7).unwrap();
        let after = loaded.query_exact(&key, 7).unwrap();
        assert_eq!(before.ids, after.ids);
        assert_eq!(before.scores, after.scores);
        let ba = index.query_approx(&key, 7, Some(60)).unwrap();
        let aa = loaded.query_approx(&key, 7, Some(60)).unwrap();
        assert_eq!(ba.ids, aa.ids);
    }

    #[test]
    fn truncated_index_file_is_rejected() {
        let items = random_items(30, 4, 8);
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.idx");
        index.save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&p, bytes).unwrap();
        assert!(VectorIndex::load(&p).is_err());
    }

    #[test]
    fn unit_vectors_rank_identically_under_both_measures() {
        let mut rng = rng_for(9, "unit-vectors");
        let items: Vec<(String, Vec<f64>)> = (0..80)
            .map(|i| {
                let mut v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                (format!("i{i:03}"), v)
            })
            .collect();
        let mut key: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = key.iter().map(|x| x * x).sum::<f64>().sqrt();
        key.iter_mut().for_each(|x| *x /= n);

        let cos_index = build_index(
            &items,
            &IndexConfig {
                measure: Measure::Cos,
                ..IndexConfig::default()
            },
        )
        .unwrap();
        let euc_index = build_index(
            &items,
            &IndexConfig {
                measure: Measure::Euc,
                ..IndexConfig::default()
            },
        )
        .unwrap();
        let a = cos_index.query_exact(&key, 80).unwrap();
        let b = euc_index.query_exact(&key, 80).unwrap();
        assert_eq!(a.ids, b.ids);
    }

    #[test]
    fn zero_k_is_domain_error() {
        let items = random_items(5, 3, 10);
        let index = build_index(&items, &IndexConfig::default()).unwrap();
        assert!(index.query_exact(&[0.0, 1.0, 0.0], 0).is_err());
    }

    #[test]
    fn approx_recall_is_monotone_in_budget() {
        // clustered vectors make partial-budget recall nontrivial
        let mut rng = rng_for(11, "mono-budget");
        let dim = 8;
        let centers: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let items: Vec<(String, Vec<f64>)> = (0..900)
            .map(|i| {
                let c = &centers[i % centers.len()];
                let v = c.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect();
                (format!("i{i:04}"), v)
            })
            .collect();
        let cfg = IndexConfig {
            approx: ApproxMode::Always,
            degree: 8,
            ..IndexConfig::default()
        };
        let index = build_index(&items, &cfg).unwrap();

        let mut recall_at = |budget: usize| -> f64 {
            let mut qrng = rng_for(12, "mono-queries");
            let mut hits = 0usize;
            let mut total = 0usize;
            for _ in 0..120 {
                let base = &items[qrng.gen_range(0..items.len())].1;
                let key: Vec<f64> = base.iter().map(|v| v + qrng.gen_range(-0.3..0.3)).collect();
                let exact = index.query_exact(&key, 10).unwrap();
                let approx = index.query_approx(&key, 10, Some(budget)).unwrap();
                let want: HashSet<&String> = exact.ids.iter().collect();
                hits += approx.ids.iter().filter(|id| want.contains(id)).count();
                total += want.len();
            }
            hits as f64 / total as f64
        };
        let low = recall_at(40);
        let mid = recall_at(150);
        let high = recall_at(900);
        assert!(low <= mid + 1e-12 && mid <= high + 1e-12, "recall not monotone: {low} {mid} {high}");
        assert_eq!(high, 1.0);
    }
}
