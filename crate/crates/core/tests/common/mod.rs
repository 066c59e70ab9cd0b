//! Reference implementations for the integration suites. Everything here is
//! computed from the raw edge list, independently of the library's CSR and
//! operator code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use heurlink::HeuristicId;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adjacency sets of `A + I`.
pub struct RefGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub nbrs: Vec<BTreeSet<usize>>,
}

impl RefGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> RefGraph {
        let mut nbrs: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for &(u, v) in edges {
            nbrs[u].insert(v);
            nbrs[v].insert(u);
        }
        RefGraph { n, edges: edges.to_vec(), nbrs }
    }

    /// Undirected edges excluding self-loops.
    pub fn num_edges(&self) -> usize {
        self.nbrs.iter().enumerate().map(|(i, s)| s.iter().filter(|&&j| j > i).count()).sum()
    }

    pub fn deg(&self, i: usize) -> f64 {
        self.nbrs[i].len() as f64
    }

    pub fn common(&self, i: usize, j: usize) -> Vec<usize> {
        self.nbrs[i].intersection(&self.nbrs[j]).copied().collect()
    }

    /// `W[l][j]`: walks of length `l` from `i` to `j` on `A + I`, counted
    /// exactly in integers.
    pub fn walks_from(&self, i: usize, max_len: usize) -> Vec<Vec<u128>> {
        let mut out = vec![vec![0u128; self.n]];
        out[0][i] = 1;
        for l in 0..max_len {
            let mut next = vec![0u128; self.n];
            for (k, &c) in out[l].iter().enumerate() {
                if c > 0 {
                    for &j in &self.nbrs[k] {
                        next[j] += c;
                    }
                }
            }
            out.push(next);
        }
        out
    }

    /// Distribution of a lazy-free random walk on `A + I` started at `i`,
    /// step by step.
    pub fn walk_probs_from(&self, i: usize, steps: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]];
        out[0][i] = 1.0;
        for l in 0..steps {
            let mut next = vec![0.0; self.n];
            for k in 0..self.n {
                let p = out[l][k];
                if p != 0.0 {
                    let share = p / self.deg(k);
                    for &j in &self.nbrs[k] {
                        next[j] += share;
                    }
                }
            }
            out.push(next);
        }
        out
    }

    pub fn raw(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if self.nbrs[i].contains(&j) { 1.0 } else { 0.0 })
    }

    pub fn row_stochastic(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if self.nbrs[i].contains(&j) { 1.0 / self.deg(i) } else { 0.0 })
    }

    pub fn col_stochastic(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if self.nbrs[i].contains(&j) { 1.0 / self.deg(j) } else { 0.0 })
    }

    pub fn symmetric(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if self.nbrs[i].contains(&j) {
                1.0 / (self.deg(i) * self.deg(j)).sqrt()
            } else {
                0.0
            }
        })
    }

    /// Convex mixture in (rs, cs, sym) order.
    pub fn mixture(&self, a: [f64; 3]) -> DMatrix<f64> {
        self.row_stochastic() * a[0] + self.col_stochastic() * a[1] + self.symmetric() * a[2]
    }
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softmax(l: [f64; 3]) -> [f64; 3] {
    let m = l[0].max(l[1]).max(l[2]);
    let e = l.map(|x| (x - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

/// Closed-form heuristic values `s(i, ·)` from neighbor sets and walk
/// counts.
pub fn heuristic_row(g: &RefGraph, id: &HeuristicId, i: usize) -> Vec<f64> {
    let series = |coef: &dyn Fn(usize) -> f64, order: usize| -> Vec<f64> {
        let w = g.walks_from(i, order);
        (0..g.n).map(|j| (0..=order).map(|l| coef(l) * w[l][j] as f64).sum()).collect()
    };
    let rw = |alpha: f64, last: usize| -> Vec<f64> {
        let p = g.walk_probs_from(i, last);
        (0..g.n)
            .map(|j| (0..=last).map(|l| (1.0 - alpha) * alpha.powi(l as i32) * p[l][j]).sum())
            .collect()
    };
    let local = |f: &dyn Fn(usize, &[usize]) -> f64| -> Vec<f64> { (0..g.n).map(|j| f(j, &g.common(i, j))).collect() };
    match *id {
        HeuristicId::Cn => local(&|_, cn| cn.len() as f64),
        HeuristicId::Llhn => local(&|j, cn| cn.len() as f64 / (g.deg(i) * g.deg(j))),
        HeuristicId::Ra => local(&|_, cn| cn.iter().map(|&k| 1.0 / g.deg(k)).sum()),
        HeuristicId::RaSq => local(&|_, cn| cn.iter().map(|&k| 1.0 / (g.deg(k) * g.deg(k))).sum()),
        HeuristicId::RaSym => local(&|j, cn| {
            cn.iter().map(|&k| 1.0 / g.deg(k)).sum::<f64>() / (g.deg(i) * g.deg(j)).sqrt()
        }),
        HeuristicId::Katz { gamma, order } => {
            series(&|l| if l == 0 { 0.0 } else { gamma.powi(l as i32) }, order)
        }
        HeuristicId::Glhn { phi, order } => series(&|l| phi.powi(l as i32), order),
        HeuristicId::Lpi { gamma, order } => {
            series(&|l| if l < 2 { 0.0 } else { gamma.powi(l as i32 - 2) }, order)
        }
        HeuristicId::Rwr { alpha, order } => rw(alpha, order),
        HeuristicId::Lrw { alpha, order } => {
            let f = g.deg(i) / (2.0 * g.num_edges() as f64);
            rw(alpha, order - 1).into_iter().map(|v| f * v).collect()
        }
    }
}

/// The heuristic set checked by the equivalence and recovery suites, with
/// truncations short enough for exhaustive walk counting.
pub fn suite_heuristics() -> Vec<HeuristicId> {
    vec![
        HeuristicId::Cn,
        HeuristicId::Llhn,
        HeuristicId::Ra,
        HeuristicId::Katz { gamma: 0.05, order: 6 },
        HeuristicId::Glhn { phi: 0.05, order: 6 },
        HeuristicId::Rwr { alpha: 0.5, order: 8 },
        HeuristicId::Lpi { gamma: 0.1, order: 5 },
        HeuristicId::Lrw { alpha: 0.5, order: 4 },
        HeuristicId::RaSq,
        HeuristicId::RaSym,
    ]
}

pub fn to_nalgebra(m: &heurlink::DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}
