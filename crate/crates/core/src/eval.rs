//! Ranking metrics and randomized edge splits.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    HitsAt(usize),
    Mrr,
    Auc,
}

impl Metric {
    pub fn k(&self) -> Option<usize> {
        match *self {
            Metric::HitsAt(k) => Some(k),
            _ => None,
        }
    }

    /// Scores positives against a shared negative pool. For MRR every
    /// positive is ranked against the whole pool.
    pub fn evaluate(&self, pos: &[f64], neg: &[f64]) -> Result<f64> {
        match *self {
            Metric::HitsAt(k) => hits_at_k(pos, neg, k),
            Metric::Auc => auc_metric(pos, neg),
            Metric::Mrr => {
                check_nonempty(pos, neg)?;
                let mut sorted = neg.to_vec();
                sorted.sort_by(f64::total_cmp);
                let rr: f64 = pos.iter().map(|&p| 1.0 / rank_in_sorted(p, &sorted)).sum();
                Ok(rr / pos.len() as f64)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::HitsAt(k) => write!(f, "hits@{k}"),
            Metric::Mrr => f.write_str("mrr"),
            Metric::Auc => f.write_str("auc"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "mrr" => Ok(Metric::Mrr),
            "auc" => Ok(Metric::Auc),
            _ => {
                let k = lower
                    .strip_prefix("hits@")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k > 0)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown metric {s:?}")))?;
                Ok(Metric::HitsAt(k))
            }
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_nonempty(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Insufficient(format!(
            "metric needs positives and negatives, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    Ok(())
}

/// Fraction of positives scoring strictly above the `k`-th largest
/// negative. With fewer than `k` negatives every positive counts as a hit.
pub fn hits_at_k(pos: &[f64], neg: &[f64], k: usize) -> Result<f64> {
    check_nonempty(pos, neg)?;
    if k == 0 {
        return Err(Error::InvalidParameter("hits@K needs K >= 1".into()));
    }
    if k > neg.len() {
        warn!("hits@{k} with only {} negatives; every positive counts as a hit", neg.len());
        return Ok(1.0);
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    let hits = pos.iter().filter(|&&p| p > threshold).count();
    Ok(hits as f64 / pos.len() as f64)
}

/// `1 + |{n > p}| + ½|{n = p}|` against ascending-sorted negatives.
fn rank_in_sorted(p: f64, sorted: &[f64]) -> f64 {
    let below = sorted.partition_point(|&n| n < p);
    let not_above = sorted.partition_point(|&n| n <= p);
    let greater = sorted.len() - not_above;
    let ties = not_above - below;
    1.0 + greater as f64 + 0.5 * ties as f64
}

/// Mean reciprocal rank, each positive against its own negatives.
pub fn mrr(per_positive: &[(f64, Vec<f64>)]) -> Result<f64> {
    if per_positive.is_empty() {
        return Err(Error::Insufficient("mrr needs at least one positive".into()));
    }
    let mut total = 0.0;
    for (k, (p, negs)) in per_positive.iter().enumerate() {
        if negs.is_empty() {
            return Err(Error::Insufficient(format!("positive {k} has no negatives")));
        }
        let mut sorted = negs.clone();
        sorted.sort_by(f64::total_cmp);
        total += 1.0 / rank_in_sorted(*p, &sorted);
    }
    Ok(total / per_positive.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from integer rank counts, so it equals the
/// pairwise enumeration exactly.
pub fn auc_metric(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_nonempty(pos, neg)?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut twice_wins: u128 = 0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let not_above = sorted.partition_point(|&n| n <= p);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_wins as f64 / (2 * pos.len() * neg.len()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn compute(metric: Metric, pos: &[f64], neg: &[f64], seed: u64) -> Result<EvalReport> {
        Ok(EvalReport {
            metric,
            k: metric.k(),
            value: metric.evaluate(pos, neg)?,
            n_pos: pos.len(),
            n_neg: neg.len(),
            seed,
        })
    }
}

/// Train/validation/test partition of a graph's edges, with sampled
/// non-edges as validation and test negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    pub seed: u64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Edges of the propagation graph.
    pub train: Vec<(usize, usize)>,
    pub valid_pos: Vec<(usize, usize)>,
    pub valid_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    /// Training targets when they differ from the propagation edges.
    pub supervision: Option<Vec<(usize, usize)>>,
}

fn canon((u, v): (usize, usize)) -> (usize, usize) {
    (u.min(v), u.max(v))
}

impl EdgeSplit {
    /// The graph used for propagation during training and evaluation.
    pub fn train_graph(&self, num_nodes: usize) -> Result<SparseGraph> {
        SparseGraph::from_edges(num_nodes, &self.train)
    }

    /// Positives the training loss is computed on.
    pub fn supervision_positives(&self) -> &[(usize, usize)] {
        self.supervision.as_deref().unwrap_or(&self.train)
    }

    /// Largest node id referenced anywhere in the split.
    pub fn max_node(&self) -> Option<usize> {
        [&self.train, &self.valid_pos, &self.valid_neg, &self.test_pos, &self.test_neg]
            .into_iter()
            .chain(self.supervision.as_ref())
            .flat_map(|v| v.iter())
            .map(|&(u, v)| u.max(v))
            .max()
    }

    /// Positive sets are pairwise disjoint, negatives avoid every positive,
    /// and no pair is a self-loop.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut positives: Vec<(&str, &[(usize, usize)])> = vec![
            ("valid_pos", &self.valid_pos),
            ("test_pos", &self.test_pos),
        ];
        match &self.supervision {
            Some(s) => {
                positives.push(("supervision", s));
                let train: HashSet<_> = self.train.iter().map(|&e| canon(e)).collect();
                for (name, list) in &positives {
                    if let Some(&e) = list.iter().find(|&&e| train.contains(&canon(e))) {
                        return Err(Error::Invariant(format!("{name} pair {e:?} is a propagation edge")));
                    }
                }
            }
            None => positives.push(("train", &self.train)),
        }
        for (name, list) in &positives {
            for &e in list.iter() {
                if e.0 == e.1 {
                    return Err(Error::Invariant(format!("{name} contains self-pair {e:?}")));
                }
                if !seen.insert(canon(e)) {
                    return Err(Error::Invariant(format!("{name} pair {e:?} appears in two partitions")));
                }
            }
        }
        let train: HashSet<_> = self.train.iter().map(|&e| canon(e)).collect();
        for (name, list) in [("valid_neg", &self.valid_neg), ("test_neg", &self.test_neg)] {
            for &e in list {
                if e.0 == e.1 || seen.contains(&canon(e)) || train.contains(&canon(e)) {
                    return Err(Error::Invariant(format!("{name} pair {e:?} is not a non-edge")));
                }
            }
        }
        Ok(())
    }
}

/// Samples `count` distinct unordered non-edges of `g` avoiding `taken`.
pub(crate) fn sample_non_edges(
    g: &SparseGraph,
    count: usize,
    taken: &mut HashSet<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = g.num_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let available = total_pairs - g.num_edges() - taken.iter().filter(|&&(u, v)| !g.has_edge(u, v)).count();
    if count > available {
        return Err(Error::Insufficient(format!(
            "need {count} non-edges, only {available} available"
        )));
    }
    let mut out = Vec::with_capacity(count);
    if available < 4 * count {
        let mut pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v) && !taken.contains(&(u, v)))
            .collect();
        pool.shuffle(rng);
        pool.truncate(count);
        taken.extend(pool.iter().copied());
        return Ok(pool);
    }
    while out.len() < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        let e = canon((u, v));
        if taken.insert(e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Random split with `⌊ratio·M⌋` validation and test edges and as many
/// sampled non-edges of the full graph for each.
pub fn split_edges(g: &SparseGraph, valid_ratio: f64, test_ratio: f64, seed: u64) -> Result<EdgeSplit> {
    for r in [valid_ratio, test_ratio] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("split ratio {r} outside [0, 1)")));
        }
    }
    if valid_ratio + test_ratio >= 1.0 {
        return Err(Error::InvalidParameter("split ratios must sum below 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = g.edges();
    let m = edges.len();
    let n_valid = (valid_ratio * m as f64).floor() as usize;
    let n_test = (test_ratio * m as f64).floor() as usize;
    edges.shuffle(&mut rng);
    let valid_pos = edges[..n_valid].to_vec();
    let test_pos = edges[n_valid..n_valid + n_test].to_vec();
    let mut train = edges[n_valid + n_test..].to_vec();
    train.sort_unstable();
    let mut taken = HashSet::new();
    let valid_neg = sample_non_edges(g, n_valid, &mut taken, &mut rng)?;
    let test_neg = sample_non_edges(g, n_test, &mut taken, &mut rng)?;
    Ok(EdgeSplit {
        seed,
        valid_ratio,
        test_ratio,
        train,
        valid_pos,
        valid_neg,
        test_pos,
        test_neg,
        supervision: None,
    })
}
