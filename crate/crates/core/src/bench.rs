//! Forward-pass timing against depth, edge count and feature width.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{PropagationOperators, SparseGraph};
use crate::model::{self, BetaInit, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub num_nodes: usize,
    pub base_depth: usize,
    pub base_edges: usize,
    pub base_features: usize,
    /// Timed runs per point; the minimum is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            num_nodes: 20_000,
            base_depth: 8,
            base_edges: 160_000,
            base_features: 32,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Depth,
    Edges,
    Features,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Depth => "depth",
            Axis::Edges => "edges",
            Axis::Features => "features",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub axis: Axis,
    pub depth: usize,
    pub num_edges: usize,
    pub feature_dim: usize,
    pub seconds: f64,
}

impl BenchRow {
    fn value(&self) -> usize {
        match self.axis {
            Axis::Depth => self.depth,
            Axis::Edges => self.num_edges,
            Axis::Features => self.feature_dim,
        }
    }
}

/// Time ratio between consecutive points of one axis whose value doubles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Doubling {
    pub axis: Axis,
    pub from: usize,
    pub to: usize,
    pub ratio: f64,
}

/// `m` distinct uniformly random edges on `n` nodes.
pub fn random_graph(n: usize, m: usize, seed: u64) -> Result<SparseGraph> {
    let max = n * n.saturating_sub(1) / 2;
    if m > max / 2 {
        return Err(Error::InvalidParameter(format!("{m} edges is too dense for {n} nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u, v));
        }
    }
    SparseGraph::from_edges(n, &edges)
}

/// Minimum wall time of an evaluation-mode propagation over embeddings.
pub fn time_forward(g: &SparseGraph, depth: usize, features: usize, repeats: usize, seed: u64) -> Result<f64> {
    let cfg = ModelConfig {
        depth,
        input_dim: None,
        hidden_dim: features,
        use_node_embeddings: true,
        embedding_dim: features,
        mlp_layers: 1,
        mlp_hidden_dim: features,
        beta_init: BetaInit::Uniform,
        dropout: 0.0,
        ..Default::default()
    };
    let params = model::init_params(&cfg, g, seed)?;
    let ops = PropagationOperators::new(g);
    // Warm-up run, untimed.
    model::propagate(&params, &ops, None)?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let z = model::propagate(&params, &ops, None)?;
        best = best.min(t.elapsed().as_secs_f64());
        drop(z);
    }
    Ok(best)
}

/// Varies each factor over its list with the others held at the base
/// values.
pub fn run_scaling(cfg: &BenchConfig, depths: &[usize], edges: &[usize], features: &[usize]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let base_graph = random_graph(cfg.num_nodes, cfg.base_edges, cfg.seed)?;
    for &l in depths {
        rows.push(BenchRow {
            axis: Axis::Depth,
            depth: l,
            num_edges: cfg.base_edges,
            feature_dim: cfg.base_features,
            seconds: time_forward(&base_graph, l, cfg.base_features, cfg.repeats, cfg.seed)?,
        });
    }
    for &m in edges {
        let g = random_graph(cfg.num_nodes, m, cfg.seed)?;
        rows.push(BenchRow {
            axis: Axis::Edges,
            depth: cfg.base_depth,
            num_edges: m,
            feature_dim: cfg.base_features,
            seconds: time_forward(&g, cfg.base_depth, cfg.base_features, cfg.repeats, cfg.seed)?,
        });
    }
    for &f in features {
        rows.push(BenchRow {
            axis: Axis::Features,
            depth: cfg.base_depth,
            num_edges: cfg.base_edges,
            feature_dim: f,
            seconds: time_forward(&base_graph, cfg.base_depth, f, cfg.repeats, cfg.seed)?,
        });
    }
    Ok(rows)
}

pub fn doublings(rows: &[BenchRow]) -> Vec<Doubling> {
    rows.windows(2)
        .filter(|w| w[0].axis == w[1].axis && w[1].value() == 2 * w[0].value())
        .map(|w| Doubling {
            axis: w[0].axis,
            from: w[0].value(),
            to: w[1].value(),
            ratio: w[1].seconds / w[0].seconds,
        })
        .collect()
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[BenchRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "axis,depth,num_edges,feature_dim,seconds")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{:?}", r.axis.name(), r.depth, r.num_edges, r.feature_dim, r.seconds)?;
    }
    out.flush()?;
    Ok(())
}
