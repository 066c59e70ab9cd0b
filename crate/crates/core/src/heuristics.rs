//! Classic link heuristics, each available three ways: a closed-form or
//! brute-force definition, a dense matrix expression, and a configuration
//! of the unified formulation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::formulation::{score_pairs_formulation, FormulationConfig, LayerOperator, MAX_DENSE_NODES};
use crate::graph::{OperatorSpec, SparseGraph};
use crate::oracle;

/// Truncation used for infinite series when none is given.
pub const DEFAULT_ORDER: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum HeuristicId {
    /// Common neighbors `|Γ_i ∩ Γ_j|`.
    Cn,
    /// Local Leicht–Holme–Newman `CN / (d̃_i d̃_j)`.
    Llhn,
    /// Resource allocation `Σ_{k ∈ Γ_i∩Γ_j} 1/d̃_k`.
    Ra,
    /// Katz index `Σ_{l≥1} γ^l (Ã^l)_ij`.
    Katz { gamma: f64, order: usize },
    /// Global Leicht–Holme–Newman `[i=j] + Σ_{l≥1} φ^l (Ã^l)_ij`.
    Glhn { phi: f64, order: usize },
    /// Random walk with restart `Σ_{l≥0} (1−α)α^l (Ã_rs^l)_ij`.
    Rwr { alpha: f64, order: usize },
    /// Local path index `Σ_{l=2}^{L} γ^{l−2} (Ã^l)_ij`.
    Lpi { gamma: f64, order: usize },
    /// Local random walk `(d̃_i/2M) Σ_{l=0}^{L−1} (1−α)α^l (Ã_rs^l)_ij`.
    Lrw { alpha: f64, order: usize },
    /// `Σ_{k ∈ Γ_i∩Γ_j} 1/d̃_k²`.
    RaSq,
    /// `RA / √(d̃_i d̃_j)`.
    RaSym,
}

impl HeuristicId {
    pub fn name(&self) -> &'static str {
        match self {
            HeuristicId::Cn => "cn",
            HeuristicId::Llhn => "llhn",
            HeuristicId::Ra => "ra",
            HeuristicId::Katz { .. } => "katz",
            HeuristicId::Glhn { .. } => "glhn",
            HeuristicId::Rwr { .. } => "rwr",
            HeuristicId::Lpi { .. } => "lpi",
            HeuristicId::Lrw { .. } => "lrw",
            HeuristicId::RaSq => "ra_sq",
            HeuristicId::RaSym => "ra_sym",
        }
    }

    /// Builds an id from a method name and the shared parameter flags.
    /// Missing parameters fall back to γ = φ = 0.5, α = 0.5, and order 20
    /// (3 for the local path and local random walk indices).
    pub fn from_parts(
        method: &str,
        gamma: Option<f64>,
        phi: Option<f64>,
        alpha: Option<f64>,
        order: Option<usize>,
    ) -> Result<Self> {
        let id = match method.to_ascii_lowercase().replace('-', "_").as_str() {
            "cn" => HeuristicId::Cn,
            "llhn" => HeuristicId::Llhn,
            "ra" => HeuristicId::Ra,
            "katz" | "ki" => HeuristicId::Katz {
                gamma: gamma.unwrap_or(0.5),
                order: order.unwrap_or(DEFAULT_ORDER),
            },
            "glhn" => HeuristicId::Glhn {
                phi: phi.or(gamma).unwrap_or(0.5),
                order: order.unwrap_or(DEFAULT_ORDER),
            },
            "rwr" => HeuristicId::Rwr {
                alpha: alpha.unwrap_or(0.5),
                order: order.unwrap_or(DEFAULT_ORDER),
            },
            "lpi" => HeuristicId::Lpi {
                gamma: gamma.unwrap_or(0.5),
                order: order.unwrap_or(3),
            },
            "lrw" => HeuristicId::Lrw {
                alpha: alpha.unwrap_or(0.5),
                order: order.unwrap_or(3),
            },
            "ra_sq" => HeuristicId::RaSq,
            "ra_sym" => HeuristicId::RaSym,
            other => return Err(Error::InvalidParameter(format!("unknown heuristic {other:?}"))),
        };
        id.validate()?;
        Ok(id)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        let min_order = |order: usize, min: usize| {
            if order >= min {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{} needs order >= {min}, got {order}",
                    self.name()
                )))
            }
        };
        match *self {
            HeuristicId::Katz { gamma, order } => {
                unit("gamma", gamma)?;
                min_order(order, 1)
            }
            HeuristicId::Glhn { phi, .. } => unit("phi", phi),
            HeuristicId::Rwr { alpha, .. } => unit("alpha", alpha),
            HeuristicId::Lpi { gamma, order } => {
                unit("gamma", gamma)?;
                min_order(order, 2)
            }
            HeuristicId::Lrw { alpha, order } => {
                unit("alpha", alpha)?;
                min_order(order, 1)
            }
            _ => Ok(()),
        }
    }

    /// Local heuristics have a closed form over common neighbors.
    pub fn is_local(&self) -> bool {
        matches!(
            self,
            HeuristicId::Cn | HeuristicId::Llhn | HeuristicId::Ra | HeuristicId::RaSq | HeuristicId::RaSym
        )
    }

    /// Truncation order of the walk expansion (2 for local heuristics).
    pub fn order(&self) -> usize {
        match *self {
            HeuristicId::Katz { order, .. }
            | HeuristicId::Glhn { order, .. }
            | HeuristicId::Rwr { order, .. }
            | HeuristicId::Lpi { order, .. }
            | HeuristicId::Lrw { order, .. } => order,
            _ => 2,
        }
    }
}

impl fmt::Display for HeuristicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            HeuristicId::Katz { gamma, order } | HeuristicId::Lpi { gamma, order } => {
                write!(f, "{}(gamma={gamma}, order={order})", self.name())
            }
            HeuristicId::Glhn { phi, order } => write!(f, "glhn(phi={phi}, order={order})"),
            HeuristicId::Rwr { alpha, order } | HeuristicId::Lrw { alpha, order } => {
                write!(f, "{}(alpha={alpha}, order={order})", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for HeuristicId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeuristicId::from_parts(s, None, None, None, None)
    }
}

fn geometric(first: f64, ratio: f64, count: usize) -> impl Iterator<Item = f64> {
    std::iter::successors(Some(first), move |b| Some(b * ratio)).take(count)
}

/// The formulation configuration realizing `id`.
///
/// For the local random walk the per-source factor `d̃_i/2M` is not part of
/// the configuration; [`score_pairs`] applies it.
pub fn heuristic_config(id: &HeuristicId) -> Result<FormulationConfig> {
    use OperatorSpec::*;
    id.validate()?;
    let fixed = |specs: &[OperatorSpec]| specs.iter().map(|&s| LayerOperator::Fixed(s)).collect();
    match *id {
        HeuristicId::Cn => FormulationConfig::new(fixed(&[RawWithLoops, RawWithLoops]), vec![0.0, 0.0, 1.0]),
        HeuristicId::Llhn => {
            FormulationConfig::new(fixed(&[RowStochastic, ColumnStochastic]), vec![0.0, 0.0, 1.0])
        }
        HeuristicId::Ra => {
            FormulationConfig::new(fixed(&[ColumnStochastic, RawWithLoops]), vec![0.0, 0.0, 1.0])
        }
        HeuristicId::RaSq => {
            FormulationConfig::new(fixed(&[ColumnStochastic, RowStochastic]), vec![0.0, 0.0, 1.0])
        }
        HeuristicId::RaSym => FormulationConfig::new(fixed(&[Symmetric, Symmetric]), vec![0.0, 0.0, 1.0]),
        HeuristicId::Katz { gamma, order } => {
            let betas = std::iter::once(0.0).chain(geometric(gamma, gamma, order)).collect();
            FormulationConfig::uniform(RawWithLoops, betas)
        }
        HeuristicId::Glhn { phi, order } => {
            FormulationConfig::uniform(RawWithLoops, geometric(1.0, phi, order + 1).collect())
        }
        HeuristicId::Rwr { alpha, order } => {
            FormulationConfig::uniform(RowStochastic, geometric(1.0 - alpha, alpha, order + 1).collect())
        }
        HeuristicId::Lpi { gamma, order } => {
            let betas = [0.0, 0.0].into_iter().chain(geometric(1.0, gamma, order - 1)).collect();
            FormulationConfig::uniform(RawWithLoops, betas)
        }
        HeuristicId::Lrw { alpha, order } => {
            FormulationConfig::uniform(RowStochastic, geometric(1.0 - alpha, alpha, order).collect())
        }
    }
}

/// The second resource-allocation configuration, `Ã · Ã_rs`.
pub fn ra_alternative_config() -> FormulationConfig {
    FormulationConfig::new(
        vec![
            LayerOperator::Fixed(OperatorSpec::RawWithLoops),
            LayerOperator::Fixed(OperatorSpec::RowStochastic),
        ],
        vec![0.0, 0.0, 1.0],
    )
    .expect("static config")
}

/// `d̃_i / 2M`, the per-source factor of the local random walk.
pub fn lrw_source_factor(g: &SparseGraph, i: usize) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::InvalidParameter("local random walk needs at least one edge".into()));
    }
    Ok(g.degree(i) as f64 / (2.0 * g.num_edges() as f64))
}

fn common_neighbors(g: &SparseGraph, i: usize, j: usize) -> Result<Vec<usize>> {
    g.check_node(i)?;
    g.check_node(j)?;
    let (a, b) = (g.neighbors(i), g.neighbors(j));
    let (mut p, mut q) = (0, 0);
    let mut out = Vec::new();
    while p < a.len() && q < b.len() {
        match a[p].cmp(&b[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[p]);
                p += 1;
                q += 1;
            }
        }
    }
    Ok(out)
}

pub fn score_cn(g: &SparseGraph, i: usize, j: usize) -> Result<f64> {
    Ok(common_neighbors(g, i, j)?.len() as f64)
}

pub fn score_llhn(g: &SparseGraph, i: usize, j: usize) -> Result<f64> {
    Ok(score_cn(g, i, j)? / (g.degree(i) as f64 * g.degree(j) as f64))
}

pub fn score_ra(g: &SparseGraph, i: usize, j: usize) -> Result<f64> {
    Ok(common_neighbors(g, i, j)?
        .iter()
        .map(|&k| 1.0 / g.degree(k) as f64)
        .sum())
}

pub fn score_ra_sq(g: &SparseGraph, i: usize, j: usize) -> Result<f64> {
    Ok(common_neighbors(g, i, j)?
        .iter()
        .map(|&k| {
            let d = g.degree(k) as f64;
            1.0 / (d * d)
        })
        .sum())
}

pub fn score_ra_sym(g: &SparseGraph, i: usize, j: usize) -> Result<f64> {
    Ok(score_ra(g, i, j)? / (g.degree(i) as f64 * g.degree(j) as f64).sqrt())
}

fn formulation_scores(g: &SparseGraph, id: &HeuristicId, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let mut scores = score_pairs_formulation(g, &heuristic_config(id)?, pairs)?;
    if matches!(id, HeuristicId::Lrw { .. }) {
        for (s, &(i, _)) in scores.iter_mut().zip(pairs) {
            *s *= lrw_source_factor(g, i)?;
        }
    }
    Ok(scores)
}

pub fn score_katz(g: &SparseGraph, pairs: &[(usize, usize)], gamma: f64, order: usize) -> Result<Vec<f64>> {
    formulation_scores(g, &HeuristicId::Katz { gamma, order }, pairs)
}

pub fn score_glhn(g: &SparseGraph, pairs: &[(usize, usize)], phi: f64, order: usize) -> Result<Vec<f64>> {
    formulation_scores(g, &HeuristicId::Glhn { phi, order }, pairs)
}

pub fn score_rwr(g: &SparseGraph, pairs: &[(usize, usize)], alpha: f64, order: usize) -> Result<Vec<f64>> {
    formulation_scores(g, &HeuristicId::Rwr { alpha, order }, pairs)
}

pub fn score_lpi(g: &SparseGraph, pairs: &[(usize, usize)], gamma: f64, order: usize) -> Result<Vec<f64>> {
    formulation_scores(g, &HeuristicId::Lpi { gamma, order }, pairs)
}

pub fn score_lrw(g: &SparseGraph, pairs: &[(usize, usize)], alpha: f64, order: usize) -> Result<Vec<f64>> {
    formulation_scores(g, &HeuristicId::Lrw { alpha, order }, pairs)
}

/// Scores pairs with the cheapest exact route: neighbor intersection for
/// local heuristics, sparse propagation for the rest.
pub fn score_pairs(g: &SparseGraph, id: &HeuristicId, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    id.validate()?;
    let local: Option<fn(&SparseGraph, usize, usize) -> Result<f64>> = match id {
        HeuristicId::Cn => Some(score_cn),
        HeuristicId::Llhn => Some(score_llhn),
        HeuristicId::Ra => Some(score_ra),
        HeuristicId::RaSq => Some(score_ra_sq),
        HeuristicId::RaSym => Some(score_ra_sym),
        _ => None,
    };
    match local {
        Some(f) => pairs.iter().map(|&(i, j)| f(g, i, j)).collect(),
        None => formulation_scores(g, id, pairs),
    }
}

/// Dense matrix expression of the heuristic, built from `Ã` and `D̃` read
/// straight off the adjacency lists.
pub fn matrix_form(g: &SparseGraph, id: &HeuristicId) -> Result<DenseMatrix> {
    id.validate()?;
    let n = g.num_nodes();
    if n > MAX_DENSE_NODES {
        return Err(Error::LimitExceeded(format!(
            "dense matrix form limited to {MAX_DENSE_NODES} nodes, graph has {n}"
        )));
    }
    let a = DenseMatrix::from_fn(n, n, |i, j| if g.contains(i, j) { 1.0 } else { 0.0 });
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).sum()).collect();
    let rs = DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / deg[i]);
    let cs = DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / deg[j]);
    let sym = DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i] * deg[j]).sqrt());
    let power_series = |base: &DenseMatrix, coeffs: &mut dyn Iterator<Item = f64>| -> Result<DenseMatrix> {
        let mut power = DenseMatrix::identity(n);
        let mut acc = DenseMatrix::zeros(n, n);
        for (l, c) in coeffs.enumerate() {
            if l > 0 {
                power = power.matmul(base)?;
            }
            acc.add_scaled(c, &power)?;
        }
        Ok(acc)
    };
    match *id {
        HeuristicId::Cn => a.matmul(&a),
        HeuristicId::Llhn => rs.matmul(&cs),
        HeuristicId::Ra => cs.matmul(&a),
        HeuristicId::RaSq => cs.matmul(&rs),
        HeuristicId::RaSym => sym.matmul(&sym),
        HeuristicId::Katz { gamma, order } => {
            power_series(&a, &mut std::iter::once(0.0).chain(geometric(gamma, gamma, order)))
        }
        HeuristicId::Glhn { phi, order } => power_series(&a, &mut geometric(1.0, phi, order + 1)),
        HeuristicId::Rwr { alpha, order } => power_series(&rs, &mut geometric(1.0 - alpha, alpha, order + 1)),
        HeuristicId::Lpi { gamma, order } => {
            power_series(&a, &mut [0.0, 0.0].into_iter().chain(geometric(1.0, gamma, order - 1)))
        }
        HeuristicId::Lrw { alpha, order } => {
            let mut m = power_series(&rs, &mut geometric(1.0 - alpha, alpha, order))?;
            for i in 0..n {
                let f = lrw_source_factor(g, i)?;
                m.row_mut(i).iter_mut().for_each(|v| *v *= f);
            }
            Ok(m)
        }
    }
}

/// Reference values from the closed-form definitions: neighbor
/// intersections, exhaustive walk counts, or dense random-walk iteration.
pub fn oracle_scores(g: &SparseGraph, id: &HeuristicId, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    id.validate()?;
    if id.is_local() {
        return score_pairs(g, id, pairs);
    }
    let mut out = vec![0.0; pairs.len()];
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(i, _)) in pairs.iter().enumerate() {
        by_source.entry(i).or_default().push(k);
    }
    for (&i, idx) in &by_source {
        match *id {
            HeuristicId::Katz { gamma, order }
            | HeuristicId::Glhn { phi: gamma, order }
            | HeuristicId::Lpi { gamma, order } => {
                let counts = oracle::walk_counts_from(g, i, order, true)?;
                for &k in idx {
                    let j = pairs[k].1;
                    out[k] = match id {
                        HeuristicId::Katz { .. } => {
                            (1..=order).map(|l| gamma.powi(l as i32) * counts[l][j] as f64).sum()
                        }
                        HeuristicId::Glhn { .. } => {
                            (0..=order).map(|l| gamma.powi(l as i32) * counts[l][j] as f64).sum()
                        }
                        _ => (2..=order)
                            .map(|l| gamma.powi(l as i32 - 2) * counts[l][j] as f64)
                            .sum(),
                    };
                }
            }
            HeuristicId::Rwr { alpha, order } => {
                for &k in idx {
                    out[k] = oracle::oracle_rwr(g, i, pairs[k].1, alpha, order)?;
                }
            }
            HeuristicId::Lrw { alpha, order } => {
                let f = lrw_source_factor(g, i)?;
                for &k in idx {
                    out[k] = f * oracle::oracle_rwr(g, i, pairs[k].1, alpha, order - 1)?;
                }
            }
            _ => unreachable!("local heuristics handled above"),
        }
    }
    Ok(out)
}

/// Largest pairwise disagreements between the three routes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub pairs: usize,
    pub oracle_vs_matrix: f64,
    pub matrix_vs_formulation: f64,
    pub oracle_vs_formulation: f64,
}

impl VerifyReport {
    pub fn max_deviation(&self) -> f64 {
        self.oracle_vs_matrix
            .max(self.matrix_vs_formulation)
            .max(self.oracle_vs_formulation)
    }
}

/// Runs the three-way differ on `pairs`. Resource allocation additionally
/// checks its alternative configuration against the matrix form.
pub fn verify_heuristic(g: &SparseGraph, id: &HeuristicId, pairs: &[(usize, usize)]) -> Result<VerifyReport> {
    let oracle_vals = oracle_scores(g, id, pairs)?;
    let matrix = matrix_form(g, id)?;
    let formulation = formulation_scores(g, id, pairs)?;
    let mut report = VerifyReport {
        pairs: pairs.len(),
        ..Default::default()
    };
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let m = matrix.get(i, j);
        report.oracle_vs_matrix = report.oracle_vs_matrix.max((oracle_vals[k] - m).abs());
        report.matrix_vs_formulation = report.matrix_vs_formulation.max((m - formulation[k]).abs());
        report.oracle_vs_formulation = report
            .oracle_vs_formulation
            .max((oracle_vals[k] - formulation[k]).abs());
    }
    if matches!(id, HeuristicId::Ra) {
        let alt = score_pairs_formulation(g, &ra_alternative_config(), pairs)?;
        for (a, &(i, j)) in alt.iter().zip(pairs) {
            report.matrix_vs_formulation = report.matrix_vs_formulation.max((matrix.get(i, j) - a).abs());
        }
    }
    Ok(report)
}

/// Every pair `i < j` of distinct nodes that are not adjacent.
pub fn all_nonedges(g: &SparseGraph) -> Vec<(usize, usize)> {
    let n = g.num_nodes();
    let mut out = Vec::new();
    for i in 0..n {
        let nb = g.neighbors(i);
        let mut p = 0;
        for j in (i + 1)..n {
            while p < nb.len() && nb[p] < j {
                p += 1;
            }
            if p < nb.len() && nb[p] == j {
                continue;
            }
            out.push((i, j));
        }
    }
    out
}
