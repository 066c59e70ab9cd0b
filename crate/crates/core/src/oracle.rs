//! Brute-force references for the heuristic scorers. Exponential or dense,
//! so limited to small graphs.

use crate::error::{Error, Result};
use crate::graph::SparseGraph;

pub const MAX_ORACLE_NODES: usize = 60;
pub const MAX_WALK_LENGTH: usize = 8;

fn check_limits(g: &SparseGraph, len: Option<usize>) -> Result<()> {
    if g.num_nodes() > MAX_ORACLE_NODES {
        return Err(Error::LimitExceeded(format!(
            "oracle limited to {MAX_ORACLE_NODES} nodes, graph has {}",
            g.num_nodes()
        )));
    }
    if let Some(l) = len {
        if l > MAX_WALK_LENGTH {
            return Err(Error::LimitExceeded(format!(
                "walk oracle limited to length {MAX_WALK_LENGTH}, asked for {l}"
            )));
        }
    }
    Ok(())
}

/// `counts[l][j]` = number of length-`l` walks from `source` to `j` for
/// `l = 0..=max_len`, by exhaustive depth-first enumeration. With
/// `self_loops` the walk may stay in place (walks on `Ã`), otherwise only
/// real edges are followed (walks on `A`).
pub fn walk_counts_from(
    g: &SparseGraph,
    source: usize,
    max_len: usize,
    self_loops: bool,
) -> Result<Vec<Vec<u64>>> {
    check_limits(g, Some(max_len))?;
    g.check_node(source)?;
    let mut counts = vec![vec![0u64; g.num_nodes()]; max_len + 1];
    // Explicit stack of (node, depth).
    let mut stack = vec![(source, 0usize)];
    while let Some((node, depth)) = stack.pop() {
        counts[depth][node] += 1;
        if depth == max_len {
            continue;
        }
        for &next in g.neighbors(node) {
            if self_loops || next != node {
                stack.push((next, depth + 1));
            }
        }
    }
    Ok(counts)
}

/// Number of length-`len` walks from `i` to `j` on `Ã`.
pub fn oracle_path_count(g: &SparseGraph, i: usize, j: usize, len: usize) -> Result<u64> {
    g.check_node(j)?;
    Ok(walk_counts_from(g, i, len, true)?[len][j])
}

/// Same count on `A` (self-loop steps excluded).
pub fn oracle_path_count_no_loops(g: &SparseGraph, i: usize, j: usize, len: usize) -> Result<u64> {
    g.check_node(j)?;
    Ok(walk_counts_from(g, i, len, false)?[len][j])
}

/// `Σ_{l=0}^{L} (1−α)α^l (P^l)_{ij}` with `P = D̃^{-1}Ã`, by dense repeated
/// row-vector multiplication.
pub fn oracle_rwr(g: &SparseGraph, i: usize, j: usize, alpha: f64, steps: usize) -> Result<f64> {
    check_limits(g, None)?;
    g.check_node(i)?;
    g.check_node(j)?;
    let n = g.num_nodes();
    let mut p = vec![vec![0.0; n]; n];
    for (u, row) in p.iter_mut().enumerate() {
        let nb = g.neighbors(u);
        for &v in nb {
            row[v] = 1.0 / nb.len() as f64;
        }
    }
    let mut dist = vec![0.0; n];
    dist[i] = 1.0;
    let mut total = (1.0 - alpha) * dist[j];
    let mut weight = 1.0 - alpha;
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        for (u, &mass) in dist.iter().enumerate() {
            for (v, &pv) in p[u].iter().enumerate() {
                next[v] += mass * pv;
            }
        }
        dist = next;
        weight *= alpha;
        total += weight * dist[j];
    }
    Ok(total)
}
