//! The unified heuristic formulation `H = Σ_l β_l · A₁A₂…A_l` and its
//! sparse evaluation.
//!
//! Factors multiply left to right, so entry `(i, j)` of `H` is the row
//! vector `e_iᵀ` pushed through `A₁, A₂, …`. Row `i` is computed as
//! `A_lᵀ ⋯ A₁ᵀ e_i`, which costs `O(L · nnz)` per distinct source node.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{OperatorSpec, PropagationOperators, SparseGraph, SparseOperator};

/// Largest graph for which a dense `H` is assembled.
pub const MAX_DENSE_NODES: usize = 500;

/// One factor of the formulation: a fixed operator or a convex mixture of
/// (row-stochastic, column-stochastic, symmetric).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerOperator {
    Fixed(OperatorSpec),
    Mixed([f64; 3]),
}

impl LayerOperator {
    pub fn transpose(self) -> LayerOperator {
        match self {
            LayerOperator::Fixed(spec) => LayerOperator::Fixed(spec.transpose()),
            LayerOperator::Mixed([rs, cs, sym]) => LayerOperator::Mixed([cs, rs, sym]),
        }
    }

    pub fn resolve(&self, ops: &PropagationOperators) -> Result<SparseOperator> {
        match *self {
            LayerOperator::Fixed(spec) => Ok(ops.get(spec).clone()),
            LayerOperator::Mixed(alpha) => ops.mix(alpha),
        }
    }
}

impl OperatorSpec {
    /// `Ã` and `Ã_sym` are symmetric; `Ã_rsᵀ = Ã_cs`.
    pub fn transpose(self) -> OperatorSpec {
        match self {
            OperatorSpec::RowStochastic => OperatorSpec::ColumnStochastic,
            OperatorSpec::ColumnStochastic => OperatorSpec::RowStochastic,
            other => other,
        }
    }
}

/// Per-order operators `A_1..A_L` and weights `β_0..β_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulationConfig {
    pub operators: Vec<LayerOperator>,
    pub betas: Vec<f64>,
}

impl FormulationConfig {
    pub fn new(operators: Vec<LayerOperator>, betas: Vec<f64>) -> Result<Self> {
        let cfg = FormulationConfig { operators, betas };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same operator at every order.
    pub fn uniform(spec: OperatorSpec, betas: Vec<f64>) -> Result<Self> {
        let order = betas.len().saturating_sub(1);
        FormulationConfig::new(vec![LayerOperator::Fixed(spec); order], betas)
    }

    pub fn max_order(&self) -> usize {
        self.operators.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.operators.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} betas for {} operators (need one more beta than operators)",
                self.betas.len(),
                self.operators.len()
            )));
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("formulation betas".into()));
        }
        Ok(())
    }

    fn resolved_transposes(&self, g: &SparseGraph) -> Result<Vec<SparseOperator>> {
        let ops = PropagationOperators::new(g);
        self.operators
            .iter()
            .map(|op| op.transpose().resolve(&ops))
            .collect()
    }

    /// Row `i` of `H`.
    pub fn row(&self, g: &SparseGraph, source: usize) -> Result<Vec<f64>> {
        self.validate()?;
        g.check_node(source)?;
        let transposed = self.resolved_transposes(g)?;
        Ok(row_with(&transposed, &self.betas, g.num_nodes(), source))
    }

    /// Dense `H` by explicit products (small graphs only).
    pub fn dense(&self, g: &SparseGraph) -> Result<DenseMatrix> {
        self.validate()?;
        let n = g.num_nodes();
        if n > MAX_DENSE_NODES {
            return Err(Error::LimitExceeded(format!(
                "dense formulation limited to {MAX_DENSE_NODES} nodes, graph has {n}"
            )));
        }
        let ops = PropagationOperators::new(g);
        let mut prefix = DenseMatrix::identity(n);
        let mut h = DenseMatrix::identity(n);
        h.scale(self.betas[0]);
        for (op, &beta) in self.operators.iter().zip(&self.betas[1..]) {
            let factor = op.resolve(&ops)?.to_dense();
            prefix = prefix.matmul(&factor)?;
            h.add_scaled(beta, &prefix)?;
        }
        Ok(h)
    }
}

fn row_with(transposed: &[SparseOperator], betas: &[f64], n: usize, source: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[source] = 1.0;
    let mut acc: Vec<f64> = v.iter().map(|x| betas[0] * x).collect();
    for (op, &beta) in transposed.iter().zip(&betas[1..]) {
        v = op.spmv(&v).expect("operator matches graph size");
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += beta * x;
        }
    }
    acc
}

/// `H_ij` for every requested pair, one sparse propagation per distinct
/// source. An all-zero config yields zeros.
pub fn score_pairs_formulation(
    g: &SparseGraph,
    cfg: &FormulationConfig,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    cfg.validate()?;
    for &(i, j) in pairs {
        g.check_node(i)?;
        g.check_node(j)?;
    }
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(i, _)) in pairs.iter().enumerate() {
        by_source.entry(i).or_default().push(k);
    }
    let transposed = cfg.resolved_transposes(g)?;
    let n = g.num_nodes();
    let rows: Vec<(usize, Vec<f64>)> = by_source
        .keys()
        .copied()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|i| (i, row_with(&transposed, &cfg.betas, n, i)))
        .collect();
    let mut out = vec![0.0; pairs.len()];
    for (i, row) in rows {
        for &k in &by_source[&i] {
            out[k] = row[pairs[k].1];
        }
    }
    Ok(out)
}
