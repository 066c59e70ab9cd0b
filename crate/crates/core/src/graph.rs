//! Undirected graph storage with self-loops, the normalized adjacency
//! operators built on it, and sparse propagation kernels.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Work (stored entries × columns) below which the kernels stay serial.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;

/// CSR index arrays shared by the graph and every operator built from it.
#[derive(Debug, PartialEq, Eq)]
struct CsrPattern {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    /// `mirror[p]` is the position of entry `(j, i)` for the entry `(i, j)` at `p`.
    mirror: Vec<usize>,
}

impl CsrPattern {
    fn n(&self) -> usize {
        self.row_offsets.len() - 1
    }

    fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i)
            .binary_search(&j)
            .ok()
            .map(|k| self.row_offsets[i] + k)
    }
}

/// Immutable undirected graph stored as the CSR layout of `Ã = A + I`.
#[derive(Clone, Debug)]
pub struct SparseGraph {
    num_nodes: usize,
    num_edges: usize,
    pattern: Arc<CsrPattern>,
    degrees: Vec<usize>,
}

impl PartialEq for SparseGraph {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes && self.pattern == other.pattern
    }
}

impl SparseGraph {
    /// Builds the symmetric, deduplicated graph with one self-loop per node.
    ///
    /// Input pairs may repeat, appear in both orientations or be self-loops.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut adj: Vec<Vec<usize>> = (0..num_nodes).map(|i| vec![i]).collect();
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange { id, num_nodes });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        let mut pattern = CsrPattern {
            row_offsets,
            col_indices,
            mirror: Vec::new(),
        };
        let mut mirror = vec![0; pattern.col_indices.len()];
        for i in 0..num_nodes {
            for p in pattern.row_offsets[i]..pattern.row_offsets[i + 1] {
                let j = pattern.col_indices[p];
                mirror[p] = pattern
                    .position(j, i)
                    .expect("adjacency lists are symmetric by construction");
            }
        }
        pattern.mirror = mirror;
        let degrees: Vec<usize> = (0..num_nodes).map(|i| pattern.row(i).len()).collect();
        let num_edges = (pattern.col_indices.len() - num_nodes) / 2;
        Ok(SparseGraph {
            num_nodes,
            num_edges,
            pattern: Arc::new(pattern),
            degrees,
        })
    }

    /// Reads an edge-list file. The node count defaults to `1 + max id`.
    pub fn from_edge_list_file(path: impl AsRef<Path>, num_nodes: Option<usize>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let (edges, max_id) = parse_edge_list(&text)?;
        let n = match (num_nodes, max_id) {
            (Some(n), _) => n,
            (None, Some(m)) => m + 1,
            (None, None) => return Err(Error::EmptyGraph),
        };
        SparseGraph::from_edges(n, &edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edges, self-loops excluded.
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Stored entries of `Ã` (`2M + N`).
    pub fn nnz(&self) -> usize {
        self.pattern.col_indices.len()
    }

    /// Degree with self-loop, `d̃_i`.
    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Self-inclusive neighborhood `Γ_i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.pattern.row(i)
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.pattern.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.pattern.col_indices
    }

    /// True when `ã_ij = 1` (so always true for `i == j`).
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.num_nodes && j < self.num_nodes && self.pattern.position(i, j).is_some()
    }

    /// True when `i != j` and the two nodes are adjacent.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.contains(i, j)
    }

    /// Undirected edges as `(i, j)` with `i < j`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges);
        for i in 0..self.num_nodes {
            out.extend(self.neighbors(i).iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn check_node(&self, id: usize) -> Result<()> {
        if id >= self.num_nodes {
            Err(Error::NodeOutOfRange {
                id,
                num_nodes: self.num_nodes,
            })
        } else {
            Ok(())
        }
    }

    /// Weights of one of the four normalized operators on the shared pattern.
    pub fn operator_weights(&self, spec: OperatorSpec) -> Vec<f64> {
        let deg = &self.degrees;
        let mut w = Vec::with_capacity(self.nnz());
        for i in 0..self.num_nodes {
            let di = deg[i] as f64;
            for &j in self.neighbors(i) {
                let dj = deg[j] as f64;
                w.push(match spec {
                    OperatorSpec::RawWithLoops => 1.0,
                    OperatorSpec::Symmetric => 1.0 / (di * dj).sqrt(),
                    OperatorSpec::RowStochastic => 1.0 / di,
                    OperatorSpec::ColumnStochastic => 1.0 / dj,
                });
            }
        }
        w
    }

    pub fn normalize(&self, spec: OperatorSpec) -> SparseOperator {
        SparseOperator {
            pattern: Arc::clone(&self.pattern),
            values: self.operator_weights(spec),
        }
    }

    /// Convex mixture `α₁·Ã_rs + α₂·Ã_cs + α₃·Ã_sym`.
    pub fn mix_operators(&self, alpha: [f64; 3]) -> Result<SparseOperator> {
        PropagationOperators::new(self).mix(alpha)
    }
}

pub(crate) fn parse_edge_list(text: &str) -> Result<(Vec<(usize, usize)>, Option<usize>)> {
    let mut edges = Vec::new();
    let mut max_id: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next_id = || -> Result<usize> {
            let tok = it.next().ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "expected two node ids".into(),
            })?;
            tok.parse::<usize>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad node id {tok:?}: {e}"),
            })
        };
        let u = next_id()?;
        let v = next_id()?;
        if it.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "more than two fields".into(),
            });
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        edges.push((u, v));
    }
    Ok((edges, max_id))
}

/// Writes `edges` one per line as `u v`.
pub fn write_edge_list(path: impl AsRef<Path>, edges: &[(usize, usize)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for &(u, v) in edges {
        writeln!(out, "{u} {v}")?;
    }
    out.flush()?;
    Ok(())
}

/// The four adjacency operators of the unified formulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorSpec {
    /// `Ã`
    RawWithLoops,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`
    Symmetric,
    /// `D̃^{-1} Ã`
    RowStochastic,
    /// `Ã D̃^{-1}`
    ColumnStochastic,
}

impl OperatorSpec {
    pub const ALL: [OperatorSpec; 4] = [
        OperatorSpec::RawWithLoops,
        OperatorSpec::Symmetric,
        OperatorSpec::RowStochastic,
        OperatorSpec::ColumnStochastic,
    ];

    /// The order used for the three learnable mixture weights.
    pub const MIXED: [OperatorSpec; 3] = [
        OperatorSpec::RowStochastic,
        OperatorSpec::ColumnStochastic,
        OperatorSpec::Symmetric,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            OperatorSpec::RawWithLoops => "raw",
            OperatorSpec::Symmetric => "sym",
            OperatorSpec::RowStochastic => "rs",
            OperatorSpec::ColumnStochastic => "cs",
        }
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" | "a" | "rawwithloops" => Ok(OperatorSpec::RawWithLoops),
            "sym" | "symmetric" => Ok(OperatorSpec::Symmetric),
            "rs" | "row" | "rowstochastic" => Ok(OperatorSpec::RowStochastic),
            "cs" | "col" | "columnstochastic" => Ok(OperatorSpec::ColumnStochastic),
            other => Err(Error::InvalidParameter(format!("unknown operator {other:?}"))),
        }
    }
}

/// A real-weighted square operator on a graph's `Ã` sparsity pattern.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.pattern.n()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.pattern.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.pattern.col_indices
    }

    /// Same pattern, new weights.
    pub fn with_values(&self, values: Vec<f64>) -> Result<SparseOperator> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} stored entries",
                values.len(),
                self.values.len()
            )));
        }
        Ok(SparseOperator {
            pattern: Arc::clone(&self.pattern),
            values,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Transpose on the shared (symmetric) pattern.
    pub fn transpose(&self) -> SparseOperator {
        let values = self.pattern.mirror.iter().map(|&m| self.values[m]).collect();
        SparseOperator {
            pattern: Arc::clone(&self.pattern),
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for p in self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1] {
                m.set(i, self.pattern.col_indices[p], self.values[p]);
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.values[self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1]].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim()];
        for (p, &j) in self.pattern.col_indices.iter().enumerate() {
            sums[j] += self.values[p];
        }
        sums
    }

    /// Sparse–dense product `self · x`; cost proportional to `nnz · x.cols`.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(self.dim(), x.cols());
        self.spmm_into(x, &mut out)?;
        Ok(out)
    }

    /// [`spmm`](Self::spmm) writing into an existing `n × x.cols` buffer,
    /// whose previous contents are overwritten.
    pub fn spmm_into(&self, x: &DenseMatrix, out: &mut DenseMatrix) -> Result<()> {
        let n = self.dim();
        if x.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "operator is {n}x{n}, dense input has {} rows",
                x.rows()
            )));
        }
        let f = x.cols();
        if out.shape() != (n, f) {
            return Err(Error::DimensionMismatch(format!(
                "output buffer is {:?}, product is {n}x{f}",
                out.shape()
            )));
        }
        if f == 0 {
            return Ok(());
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            out_row.fill(0.0);
            let (lo, hi) = (self.pattern.row_offsets[i], self.pattern.row_offsets[i + 1]);
            for p in lo..hi {
                let w = self.values[p];
                let src = x.row(self.pattern.col_indices[p]);
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        };
        if self.nnz() * f >= PARALLEL_WORK_THRESHOLD {
            out.as_mut_slice().par_chunks_mut(f).enumerate().for_each(kernel);
        } else {
            out.as_mut_slice().chunks_mut(f).enumerate().for_each(kernel);
        }
        Ok(())
    }

    /// Sparse matrix–vector product.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "operator is {n}x{n}, vector has length {}",
                x.len()
            )));
        }
        Ok((0..n)
            .map(|i| {
                (self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1])
                    .map(|p| self.values[p] * x[self.pattern.col_indices[p]])
                    .sum()
            })
            .collect())
    }

    /// `Σ_{(i,j) stored} w_ij · ⟨left_i, right_j⟩` for every weight set at
    /// once, i.e. `⟨left, Op_k · right⟩` for each operator `Op_k`.
    ///
    /// Rows are reduced in fixed blocks and the block sums added in order,
    /// so the result does not depend on the thread count.
    pub(crate) fn pattern_inner_products(
        &self,
        weight_sets: &[&[f64]],
        left: &DenseMatrix,
        right: &DenseMatrix,
    ) -> Vec<f64> {
        const BLOCK: usize = 64;
        let n = self.dim();
        let k = weight_sets.len();
        let block_sum = |b: usize| {
            let mut acc = vec![0.0; k];
            for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let li = left.row(i);
                for p in self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1] {
                    let rj = right.row(self.pattern.col_indices[p]);
                    let ip: f64 = li.iter().zip(rj).map(|(a, b)| a * b).sum();
                    for (a, w) in acc.iter_mut().zip(weight_sets) {
                        *a += w[p] * ip;
                    }
                }
            }
            acc
        };
        let blocks = n.div_ceil(BLOCK);
        let partials: Vec<Vec<f64>> = if self.nnz() * left.cols() >= PARALLEL_WORK_THRESHOLD {
            (0..blocks).into_par_iter().map(block_sum).collect()
        } else {
            (0..blocks).map(block_sum).collect()
        };
        let mut total = vec![0.0; k];
        for part in partials {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        total
    }
}

/// The four operator weight arrays of one graph, computed once and shared.
#[derive(Clone, Debug)]
pub struct PropagationOperators {
    pub raw: SparseOperator,
    pub sym: SparseOperator,
    pub rs: SparseOperator,
    pub cs: SparseOperator,
}

impl PropagationOperators {
    pub fn new(g: &SparseGraph) -> Self {
        PropagationOperators {
            raw: g.normalize(OperatorSpec::RawWithLoops),
            sym: g.normalize(OperatorSpec::Symmetric),
            rs: g.normalize(OperatorSpec::RowStochastic),
            cs: g.normalize(OperatorSpec::ColumnStochastic),
        }
    }

    pub fn get(&self, spec: OperatorSpec) -> &SparseOperator {
        match spec {
            OperatorSpec::RawWithLoops => &self.raw,
            OperatorSpec::Symmetric => &self.sym,
            OperatorSpec::RowStochastic => &self.rs,
            OperatorSpec::ColumnStochastic => &self.cs,
        }
    }

    pub fn dim(&self) -> usize {
        self.raw.dim()
    }

    /// Convex mixture in the (rs, cs, sym) order. `alpha` must be a
    /// probability vector (within 1e-9).
    pub fn mix(&self, alpha: [f64; 3]) -> Result<SparseOperator> {
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must be nonnegative, got {alpha:?}"
            )));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(self.mix_unchecked(alpha))
    }

    pub(crate) fn mix_unchecked(&self, alpha: [f64; 3]) -> SparseOperator {
        let values = self
            .rs
            .values
            .iter()
            .zip(&self.cs.values)
            .zip(&self.sym.values)
            .map(|((r, c), s)| alpha[0] * r + alpha[1] * c + alpha[2] * s)
            .collect();
        SparseOperator {
            pattern: Arc::clone(&self.rs.pattern),
            values,
        }
    }
}
