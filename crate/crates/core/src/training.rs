//! Losses, negative sampling, exact reverse-mode gradients, Adam, and the
//! training loops.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::graph::{PropagationOperators, SparseGraph};
use crate::model::{self, ForwardState, LossKind, Mode, ModelConfig, ModelParams, ParamGroup, PredictorState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub margin_base: f64,
    /// Scale the margin by source degree instead of keeping it constant.
    pub degree_scaled_margin: bool,
    /// Positives per step; 0 trains full-batch.
    pub batch_size: usize,
    /// Draw fresh negatives every step rather than once up front.
    pub resample_negatives: bool,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Parameter groups held fixed during training.
    pub frozen: Vec<ParamGroup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.001,
            negatives_per_positive: 1,
            margin_base: 1.0,
            degree_scaled_margin: false,
            batch_size: 0,
            resample_negatives: true,
            seed: 0,
            adam: AdamConfig::default(),
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Zero epochs is accepted and returns the initial parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1".into());
        }
        if !(self.margin_base > 0.0) {
            return bad(format!("margin_base must be positive, got {}", self.margin_base));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}

/// Unordered pair set used to keep known positives out of negative samples.
pub type PairSet = HashSet<(usize, usize)>;

pub fn pair_set(pairs: &[(usize, usize)]) -> PairSet {
    pairs.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativeSamples {
    pub pairs: Vec<(usize, usize)>,
    /// Index of the positive each negative belongs to.
    pub owner: Vec<usize>,
    /// Positives whose source had no eligible partner.
    pub skipped: usize,
}

/// `k` negatives `(i, v)` per positive `(i, j)`, `v` uniform over the
/// non-neighbors of `i` that are not in `exclude`.
pub fn sample_negatives_with(
    g: &SparseGraph,
    positives: &[(usize, usize)],
    k: usize,
    exclude: &PairSet,
    rng: &mut ChaCha8Rng,
) -> Result<NegativeSamples> {
    let n = g.num_nodes();
    let mut out = NegativeSamples::default();
    let eligible = |i: usize, v: usize| !g.contains(i, v) && !exclude.contains(&(i.min(v), i.max(v)));
    for (p, &(i, j)) in positives.iter().enumerate() {
        g.check_node(i)?;
        g.check_node(j)?;
        if g.degree(i) >= n {
            out.skipped += 1;
            continue;
        }
        let mut fallback: Option<Vec<usize>> = None;
        for _ in 0..k {
            let mut pick = None;
            if fallback.is_none() {
                for _ in 0..32 {
                    let v = rng.gen_range(0..n);
                    if eligible(i, v) {
                        pick = Some(v);
                        break;
                    }
                }
            }
            if pick.is_none() {
                let pool = fallback.get_or_insert_with(|| (0..n).filter(|&v| eligible(i, v)).collect());
                if pool.is_empty() {
                    break;
                }
                pick = Some(pool[rng.gen_range(0..pool.len())]);
            }
            out.pairs.push((i, pick.expect("chosen above")));
            out.owner.push(p);
        }
        if fallback.as_ref().is_some_and(Vec::is_empty) {
            out.skipped += 1;
        }
    }
    if out.skipped > 0 {
        warn!("{} positives had no eligible negative partner", out.skipped);
    }
    Ok(out)
}

pub fn sample_negatives(g: &SparseGraph, positives: &[(usize, usize)], k: usize, seed: u64) -> Result<NegativeSamples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_negatives_with(g, positives, k, &PairSet::new(), &mut rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

fn check_finite(scores: &[f64], what: &str) -> Result<()> {
    if scores.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} scores")))
    }
}

/// Mean over pairs of `γ (max(0, γ − s_p + s_n))²`, each negative paired
/// with its owning positive.
pub fn auc_loss(pos: &[f64], neg: &[f64], owner: &[usize], margins: &[f64]) -> Result<LossOutput> {
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    if neg.len() != owner.len() || margins.len() != pos.len() {
        return Err(Error::DimensionMismatch("auc loss inputs".into()));
    }
    let mut grad_pos = vec![0.0; pos.len()];
    let mut grad_neg = vec![0.0; neg.len()];
    if neg.is_empty() {
        return Ok(LossOutput { loss: 0.0, grad_pos, grad_neg });
    }
    let scale = 1.0 / neg.len() as f64;
    let mut loss = 0.0;
    for (q, (&sn, &p)) in neg.iter().zip(owner).enumerate() {
        let gamma = margins[p];
        let hinge = (gamma - pos[p] + sn).max(0.0);
        loss += gamma * hinge * hinge;
        let g = 2.0 * gamma * hinge * scale;
        grad_pos[p] -= g;
        grad_neg[q] += g;
    }
    Ok(LossOutput {
        loss: loss * scale,
        grad_pos,
        grad_neg,
    })
}

/// `γ_ij = base · (1 + ln(1+d̃_i) / ln(1+max d̃))`.
pub fn degree_scaled_margins(g: &SparseGraph, positives: &[(usize, usize)], base: f64) -> Vec<f64> {
    let max_d = g.degrees().iter().copied().max().unwrap_or(1) as f64;
    positives
        .iter()
        .map(|&(i, _)| base * (1.0 + (1.0 + g.degree(i) as f64).ln() / (1.0 + max_d).ln()))
        .collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss on logits with labels 1 for positives and 0 for negatives,
/// averaged over all examples.
pub fn bce_loss(pos: &[f64], neg: &[f64]) -> Result<LossOutput> {
    check_finite(pos, "positive")?;
    check_finite(neg, "negative")?;
    let count = pos.len() + neg.len();
    if count == 0 {
        return Ok(LossOutput { loss: 0.0, grad_pos: vec![], grad_neg: vec![] });
    }
    let scale = 1.0 / count as f64;
    let loss = (pos.iter().map(|&s| softplus(-s)).sum::<f64>() + neg.iter().map(|&s| softplus(s)).sum::<f64>()) * scale;
    Ok(LossOutput {
        loss,
        grad_pos: pos.iter().map(|&s| -sigmoid(-s) * scale).collect(),
        grad_neg: neg.iter().map(|&s| sigmoid(s) * scale).collect(),
    })
}

/// Gradients with exactly the shape of the parameters they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle(pub ModelParams);

impl GradientBundle {
    pub fn zeros_like(params: &ModelParams) -> GradientBundle {
        GradientBundle(params.zeros_like())
    }

    pub fn is_finite(&self) -> bool {
        self.0.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude per parameter group.
    pub fn group_max_abs(&self) -> BTreeMap<ParamGroup, f64> {
        let mut out = BTreeMap::new();
        for (g, t) in self.0.tensors() {
            let m = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let e = out.entry(g).or_insert(0.0f64);
            *e = e.max(m);
        }
        out
    }
}

/// Gradient of the predictor with respect to its input rows, accumulating
/// parameter gradients into `grads`.
fn predictor_backward(params: &ModelParams, state: &PredictorState, score_grads: &[f64], grads: &mut ModelParams) -> Result<DenseMatrix> {
    let mut d = DenseMatrix::from_vec(score_grads.len(), 1, score_grads.to_vec())?;
    for k in (0..params.mlp.len()).rev() {
        let layer = &params.mlp[k];
        let input = &state.inputs[k];
        grads.mlp[k].weight = input.matmul_tn(&d)?;
        grads.mlp[k].bias = d.column_sums();
        let mut d_in = d.matmul_nt(&layer.weight)?;
        if k > 0 {
            if let Some(mask) = &state.masks[k - 1] {
                d_in.as_mut_slice().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            let pre = &state.pre_activations[k - 1];
            d_in.as_mut_slice()
                .iter_mut()
                .zip(pre.as_slice())
                .for_each(|(v, &a)| {
                    if a <= 0.0 {
                        *v = 0.0
                    }
                });
        }
        d = d_in;
    }
    Ok(d)
}

/// `∂L/∂Z` from the Hadamard-product inputs of the predictor.
fn scatter_hadamard(z: &DenseMatrix, pairs: &[(usize, usize)], d_h: &DenseMatrix) -> DenseMatrix {
    let mut dz = DenseMatrix::zeros(z.rows(), z.cols());
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let dh = d_h.row(p);
        for (c, &g) in dh.iter().enumerate() {
            let (zi, zj) = (z.get(i, c), z.get(j, c));
            dz.row_mut(i)[c] += g * zj;
            dz.row_mut(j)[c] += g * zi;
        }
    }
    dz
}

/// Gradients through aggregation, propagation and the input block, given
/// `∂L/∂Z` before dropout has been undone.
fn propagation_backward(
    params: &ModelParams,
    fwd: &ForwardState,
    ops: &PropagationOperators,
    features: Option<&DenseMatrix>,
    mut dz: DenseMatrix,
    grads: &mut ModelParams,
) -> Result<()> {
    if let Some(mask) = &fwd.z_mask {
        dz.as_mut_slice().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    let depth = params.depth();
    for (l, layer) in fwd.layers.iter().enumerate() {
        grads.betas[l] = dz.dot(layer);
    }
    let weight_sets = [ops.rs.values(), ops.cs.values(), ops.sym.values()];
    let mut adj = dz.clone();
    adj.scale(params.betas[depth]);
    for l in (1..=depth).rev() {
        if params.fixed_operators.is_none() {
            let g = fwd.operators[l - 1].pattern_inner_products(&weight_sets, &adj, &fwd.layers[l - 1]);
            let a = fwd.alphas[l - 1];
            let mean: f64 = (0..3).map(|k| a[k] * g[k]).sum();
            grads.alpha_logits[l - 1] = [0, 1, 2].map(|k| a[k] * (g[k] - mean));
        }
        let mut next = fwd.operators[l - 1].transpose().spmm(&adj)?;
        next.add_scaled(params.betas[l - 1], &dz)?;
        adj = next;
    }
    // `adj` is now ∂L/∂X.
    let d_pre = match (&params.combine, &fwd.concatenated) {
        (Some(c), Some(cat)) => {
            let gc = grads.combine.as_mut().expect("shape mirrors params");
            gc.weight = cat.matmul_tn(&adj)?;
            gc.bias = adj.column_sums();
            let d_cat = adj.matmul_nt(&c.weight)?;
            let width = params.preproc.as_ref().map_or(0, |p| p.outputs());
            let (dp, de) = d_cat.split_cols(width);
            grads.node_embeddings = Some(de);
            Some(dp)
        }
        _ => {
            if params.preproc.is_some() {
                Some(adj)
            } else {
                grads.node_embeddings = Some(adj);
                None
            }
        }
    };
    if let (Some(dp), Some(gp)) = (d_pre, grads.preproc.as_mut()) {
        let f = features.ok_or_else(|| Error::InvalidParameter("features required for preprocessing gradient".into()))?;
        debug_assert!(fwd.preprocessed.is_some());
        gp.weight = f.matmul_tn(&dp)?;
        gp.bias = dp.column_sums();
    }
    Ok(())
}

/// Reverse-mode gradients of a loss whose gradient with respect to the
/// predictor scores is `score_grads`.
pub fn backward(
    params: &ModelParams,
    ops: &PropagationOperators,
    features: Option<&DenseMatrix>,
    fwd: &ForwardState,
    pred: &PredictorState,
    score_grads: &[f64],
) -> Result<GradientBundle> {
    if score_grads.len() != pred.scores.len() || fwd.layers.len() != params.depth() + 1 {
        return Err(Error::DimensionMismatch("backward state does not match parameters".into()));
    }
    let mut grads = params.zeros_like();
    let d_h = predictor_backward(params, pred, score_grads, &mut grads)?;
    let dz = scatter_hadamard(&fwd.z, &pred.pairs, &d_h);
    propagation_backward(params, fwd, ops, features, dz, &mut grads)?;
    Ok(GradientBundle(grads))
}

/// First and second moment estimates for every tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        AdamState {
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update. Tensors in `frozen` are left alone.
    /// Non-finite gradients abort the step before anything changes.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &GradientBundle,
        lr: f64,
        cfg: &AdamConfig,
        frozen: &[ParamGroup],
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let g_tensors = grads.0.tensors();
        let mut p_tensors = params.tensors_mut();
        if g_tensors.len() != p_tensors.len() || g_tensors.len() != self.m.len() {
            return Err(Error::DimensionMismatch("gradient and parameter tensors".into()));
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (k, ((group, p), (_, g))) in p_tensors.iter_mut().zip(&g_tensors).enumerate() {
            if p.len() != g.len() {
                return Err(Error::DimensionMismatch(format!("tensor {k} shape")));
            }
            if frozen.contains(group) {
                continue;
            }
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(&mut self.m[k]).zip(&mut self.v[k]) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Positives, negatives and margins for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub owner: Vec<usize>,
    pub margins: Vec<f64>,
}

impl Batch {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.positives.iter().chain(&self.negatives).copied().collect()
    }

    /// Loss value and its gradient with respect to `[pos; neg]` scores.
    pub fn loss(&self, kind: LossKind, scores: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (pos, neg) = scores.split_at(self.positives.len());
        let out = match kind {
            LossKind::Auc => auc_loss(pos, neg, &self.owner, &self.margins)?,
            LossKind::Bce => bce_loss(pos, neg)?,
        };
        let mut g = out.grad_pos;
        g.extend(out.grad_neg);
        Ok((out.loss, g))
    }
}

/// Graph, features and supervision for a training run.
pub struct TrainingData<'a> {
    pub graph: &'a SparseGraph,
    pub features: Option<&'a DenseMatrix>,
    pub positives: &'a [(usize, usize)],
    /// Pairs never drawn as negatives besides graph neighbors and positives.
    pub exclude: &'a [(usize, usize)],
}

/// Held-out pairs for model selection.
pub struct Validation<'a> {
    pub positives: &'a [(usize, usize)],
    pub negatives: &'a [(usize, usize)],
    pub metric: Metric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters of the best validation epoch (the last epoch without
    /// validation data).
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub skipped_negatives: usize,
}

/// Writes `epoch,loss,val_metric` rows; a missing metric is left empty.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "epoch,loss,val_metric")?;
    for r in history {
        match r.val_metric {
            Some(v) => writeln!(out, "{},{:?},{:?}", r.epoch, r.loss, v)?,
            None => writeln!(out, "{},{:?},", r.epoch, r.loss)?,
        }
    }
    out.flush()?;
    Ok(())
}

const STREAM_SAMPLING: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn margins_for(g: &SparseGraph, positives: &[(usize, usize)], cfg: &TrainConfig) -> Vec<f64> {
    if cfg.degree_scaled_margin {
        degree_scaled_margins(g, positives, cfg.margin_base)
    } else {
        vec![cfg.margin_base; positives.len()]
    }
}

/// Splits positives into (shuffled) batches and attaches negatives.
struct Batcher<'a> {
    data: &'a TrainingData<'a>,
    cfg: &'a TrainConfig,
    exclude: PairSet,
    fixed: Option<NegativeSamples>,
    rng: ChaCha8Rng,
    skipped: usize,
}

impl<'a> Batcher<'a> {
    fn new(data: &'a TrainingData<'a>, cfg: &'a TrainConfig) -> Result<Self> {
        let mut exclude = pair_set(data.positives);
        exclude.extend(pair_set(data.exclude));
        let mut b = Batcher {
            data,
            cfg,
            exclude,
            fixed: None,
            rng: stream(cfg.seed, STREAM_SAMPLING),
            skipped: 0,
        };
        if !cfg.resample_negatives {
            let negs = sample_negatives_with(
                data.graph,
                data.positives,
                cfg.negatives_per_positive,
                &b.exclude,
                &mut b.rng,
            )?;
            b.skipped += negs.skipped;
            b.fixed = Some(negs);
        }
        Ok(b)
    }

    fn epoch(&mut self) -> Result<Vec<Batch>> {
        let m = self.data.positives.len();
        let mut order: Vec<usize> = (0..m).collect();
        let size = if self.cfg.batch_size == 0 { m.max(1) } else { self.cfg.batch_size };
        if size < m {
            order.shuffle(&mut self.rng);
        }
        let mut batches = Vec::new();
        for chunk in order.chunks(size) {
            let positives: Vec<_> = chunk.iter().map(|&p| self.data.positives[p]).collect();
            let (negatives, owner) = match &self.fixed {
                Some(all) => {
                    let mut local = BTreeMap::new();
                    for (k, &p) in chunk.iter().enumerate() {
                        local.insert(p, k);
                    }
                    let mut negatives = Vec::new();
                    let mut owner = Vec::new();
                    for (pair, p) in all.pairs.iter().zip(&all.owner) {
                        if let Some(&k) = local.get(p) {
                            negatives.push(*pair);
                            owner.push(k);
                        }
                    }
                    (negatives, owner)
                }
                None => {
                    let s = sample_negatives_with(
                        self.data.graph,
                        &positives,
                        self.cfg.negatives_per_positive,
                        &self.exclude,
                        &mut self.rng,
                    )?;
                    self.skipped += s.skipped;
                    (s.pairs, s.owner)
                }
            };
            let margins = margins_for(self.data.graph, &positives, self.cfg);
            batches.push(Batch {
                positives,
                negatives,
                owner,
                margins,
            });
        }
        Ok(batches)
    }
}

fn validation_score(
    params: &ModelParams,
    z: &DenseMatrix,
    valid: &Validation<'_>,
) -> Result<f64> {
    let pos = model::predict_links(params, z, valid.positives)?;
    let neg = model::predict_links(params, z, valid.negatives)?;
    valid.metric.evaluate(&pos, &neg)
}

fn check_data(data: &TrainingData<'_>, params: &ModelParams) -> Result<()> {
    params.validate(data.graph.num_nodes())?;
    for &(i, j) in data.positives.iter().chain(data.exclude) {
        data.graph.check_node(i)?;
        data.graph.check_node(j)?;
    }
    Ok(())
}

/// End-to-end training: sample, forward, loss, backward, Adam step. Keeps
/// the parameters of the best validation epoch.
pub fn fit(
    data: &TrainingData<'_>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    init: ModelParams,
    valid: Option<&Validation<'_>>,
) -> Result<FitResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    check_data(data, &init)?;
    let ops = PropagationOperators::new(data.graph);
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut frozen = train_cfg.frozen.clone();
    if params.fixed_operators.is_some() {
        frozen.push(ParamGroup::Alpha);
    }
    let mut batcher = Batcher::new(data, train_cfg)?;
    let mut dropout_rng = stream(train_cfg.seed, STREAM_DROPOUT);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 1..=train_cfg.epochs {
        let batches = batcher.epoch()?;
        let mut total = 0.0;
        for batch in &batches {
            let fwd = model::forward(
                &params,
                &ops,
                data.features,
                Mode::Train { dropout: model_cfg.dropout, rng: &mut dropout_rng },
            )?;
            let pairs = batch.pairs();
            let pred = model::predict(
                &params,
                &fwd.z,
                &pairs,
                Mode::Train { dropout: model_cfg.dropout, rng: &mut dropout_rng },
            )?;
            let (loss, score_grads) = batch.loss(model_cfg.loss, &pred.scores)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            let grads = backward(&params, &ops, data.features, &fwd, &pred, &score_grads)?;
            adam.step(&mut params, &grads, train_cfg.learning_rate, &train_cfg.adam, &frozen)?;
            total += loss;
        }
        let loss = total / batches.len().max(1) as f64;
        let val_metric = match valid {
            Some(v) => {
                let z = model::propagate(&params, &ops, data.features)?;
                let score = validation_score(&params, &z, v)?;
                if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                    best = Some((epoch, score, params.clone()));
                }
                Some(score)
            }
            None => None,
        };
        debug!("epoch {epoch}: loss {loss:.6} val {val_metric:?}");
        history.push(EpochRecord { epoch, loss, val_metric });
    }
    if let Some((e, m, _)) = &best {
        info!("best validation {m:.4} at epoch {e}");
    }
    let (best_epoch, best_metric, params) = match best {
        Some((e, m, p)) => (Some(e), Some(m), p),
        None => (None, None, params),
    };
    Ok(FitResult {
        params,
        history,
        best_epoch,
        best_metric,
        skipped_negatives: batcher.skipped,
    })
}

/// Trains only the predictor on top of frozen propagation. `Z` is computed
/// once unless `recompute_z` asks for a fresh forward pass every step.
pub fn fit_predictor_only(
    data: &TrainingData<'_>,
    params: ModelParams,
    loss_kind: LossKind,
    dropout: f64,
    train_cfg: &TrainConfig,
    valid: Option<&Validation<'_>>,
    recompute_z: bool,
) -> Result<FitResult> {
    train_cfg.validate()?;
    check_data(data, &params)?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidParameter(format!("dropout must lie in [0, 1), got {dropout}")));
    }
    let ops = PropagationOperators::new(data.graph);
    let frozen = [
        ParamGroup::Alpha,
        ParamGroup::Beta,
        ParamGroup::Preproc,
        ParamGroup::Embedding,
        ParamGroup::Combine,
    ];
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut batcher = Batcher::new(data, train_cfg)?;
    let mut dropout_rng = stream(train_cfg.seed, STREAM_DROPOUT);
    let cached = model::propagate(&params, &ops, data.features)?;
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 1..=train_cfg.epochs {
        let batches = batcher.epoch()?;
        let mut total = 0.0;
        for batch in &batches {
            let mut z = if recompute_z {
                model::propagate(&params, &ops, data.features)?
            } else {
                cached.clone()
            };
            if let Some(mask) = (Mode::Train { dropout, rng: &mut dropout_rng }).draw_mask(z.as_slice().len()) {
                z.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            }
            let pairs = batch.pairs();
            let pred = model::predict(&params, &z, &pairs, Mode::Train { dropout, rng: &mut dropout_rng })?;
            let (loss, score_grads) = batch.loss(loss_kind, &pred.scores)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            let mut grads = params.zeros_like();
            predictor_backward(&params, &pred, &score_grads, &mut grads)?;
            adam.step(&mut params, &GradientBundle(grads), train_cfg.learning_rate, &train_cfg.adam, &frozen)?;
            total += loss;
        }
        let loss = total / batches.len().max(1) as f64;
        let val_metric = match valid {
            Some(v) => {
                let score = validation_score(&params, &cached, v)?;
                if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                    best = Some((epoch, score, params.clone()));
                }
                Some(score)
            }
            None => None,
        };
        history.push(EpochRecord { epoch, loss, val_metric });
    }
    let (best_epoch, best_metric, params) = match best {
        Some((e, m, p)) => (Some(e), Some(m), p),
        None => (None, None, params),
    };
    Ok(FitResult {
        params,
        history,
        best_epoch,
        best_metric,
        skipped_negatives: batcher.skipped,
    })
}

/// Loss value in evaluation mode, plus the predictor's hidden
/// pre-activations (used to detect rectifier kinks).
fn eval_loss(
    params: &ModelParams,
    ops: &PropagationOperators,
    features: Option<&DenseMatrix>,
    batch: &Batch,
    kind: LossKind,
) -> Result<(f64, Vec<bool>)> {
    let fwd = model::forward(params, ops, features, Mode::Eval)?;
    let pred = model::predict(params, &fwd.z, &batch.pairs(), Mode::Eval)?;
    let signs = pred
        .pre_activations
        .iter()
        .flat_map(|a| a.as_slice().iter().map(|&v| v > 0.0))
        .collect();
    Ok((batch.loss(kind, &pred.scores)?.0, signs))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FdReport {
    /// Largest `|g_an − g_fd| / max(1, |g_an|, |g_fd|)` per group.
    pub per_group: BTreeMap<ParamGroup, f64>,
    pub checked: usize,
    /// Entries skipped because every tried step crossed a rectifier kink.
    pub kinks_skipped: usize,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_group.values().fold(0.0, |m, &v| m.max(v))
    }
}

/// Central finite differences against the analytic gradient, in
/// evaluation mode (no dropout). Every α logit and β is checked, plus up to
/// `samples_per_tensor` seeded entries of each dense block. A step that
/// flips a rectifier is retried with `h/100`; if that also flips, the
/// entry is skipped and counted.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    params: &ModelParams,
    g: &SparseGraph,
    features: Option<&DenseMatrix>,
    batch: &Batch,
    kind: LossKind,
    h: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<FdReport> {
    let ops = PropagationOperators::new(g);
    let fwd = model::forward(params, &ops, features, Mode::Eval)?;
    let pred = model::predict(params, &fwd.z, &batch.pairs(), Mode::Eval)?;
    let (_, score_grads) = batch.loss(kind, &pred.scores)?;
    let analytic = backward(params, &ops, features, &fwd, &pred, &score_grads)?;
    let (_, base_signs) = eval_loss(params, &ops, features, batch, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    let tensor_info: Vec<(ParamGroup, usize)> = params.tensors().iter().map(|(g, t)| (*g, t.len())).collect();
    for (t, &(group, len)) in tensor_info.iter().enumerate() {
        if group == ParamGroup::Alpha && params.fixed_operators.is_some() {
            continue;
        }
        let exhaustive = matches!(group, ParamGroup::Alpha | ParamGroup::Beta) || len <= samples_per_tensor;
        let entries: Vec<usize> = if exhaustive {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, samples_per_tensor).into_vec()
        };
        for e in entries {
            let ga = analytic.0.tensors()[t].1[e];
            let mut fd = None;
            for step in [h, h / 100.0] {
                let mut plus = params.clone();
                plus.tensors_mut()[t].1[e] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[t].1[e] -= step;
                let (lp, sp) = eval_loss(&plus, &ops, features, batch, kind)?;
                let (lm, sm) = eval_loss(&minus, &ops, features, batch, kind)?;
                if sp == base_signs && sm == base_signs {
                    fd = Some((lp - lm) / (2.0 * step));
                    break;
                }
            }
            let Some(gf) = fd else {
                report.kinks_skipped += 1;
                continue;
            };
            let rel = (ga - gf).abs() / 1f64.max(ga.abs()).max(gf.abs());
            let slot = report.per_group.entry(group).or_insert(0.0);
            *slot = slot.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Builds a seeded gradient-check instance: a random graph, features,
/// parameters with randomized α and β, and a batch with `k` negatives per
/// positive.
pub fn random_check_instance(
    cfg: &ModelConfig,
    num_nodes: usize,
    edge_prob: f64,
    num_positives: usize,
    k: usize,
    seed: u64,
) -> Result<(SparseGraph, Option<DenseMatrix>, ModelParams, Batch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..num_nodes {
        for v in (u + 1)..num_nodes {
            if rng.gen::<f64>() < edge_prob {
                edges.push((u, v));
            }
        }
    }
    let g = SparseGraph::from_edges(num_nodes, &edges)?;
    let features = cfg
        .input_dim
        .map(|f| DenseMatrix::from_fn(num_nodes, f, |_, _| rng.gen_range(-1.0..1.0)));
    let mut params = model::init_params(cfg, &g, rng.gen())?;
    for row in &mut params.alpha_logits {
        *row = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
    }
    for b in &mut params.betas {
        *b = rng.gen_range(-1.0..1.0);
    }
    let positives: Vec<(usize, usize)> = (0..num_positives)
        .map(|_| {
            let i = rng.gen_range(0..num_nodes);
            let mut j = rng.gen_range(0..num_nodes);
            while j == i {
                j = rng.gen_range(0..num_nodes);
            }
            (i, j)
        })
        .collect();
    let negs = sample_negatives_with(&g, &positives, k, &pair_set(&positives), &mut rng)?;
    let margins = vec![1.0; positives.len()];
    let batch = Batch {
        positives,
        negatives: negs.pairs,
        owner: negs.owner,
        margins,
    };
    Ok((g, features, params, batch))
}

/// Default gradient-check model: features, embeddings, a re-projection and
/// a two-layer predictor, kept small enough to difference every entry.
pub fn gradcheck_model_config(loss: LossKind) -> ModelConfig {
    ModelConfig {
        depth: 4,
        input_dim: Some(5),
        hidden_dim: 6,
        use_node_embeddings: true,
        embedding_dim: 3,
        mlp_layers: 2,
        mlp_hidden_dim: 8,
        beta_init: model::BetaInit::Random,
        dropout: 0.0,
        loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, BetaInit};

    fn path3() -> SparseGraph {
        SparseGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn negative_sampling_examples() {
        let s = sample_negatives(&path3(), &[(0, 1)], 1, 0).unwrap();
        assert_eq!(s.pairs, vec![(0, 2)]);
        let tri = SparseGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = sample_negatives(&tri, &[(0, 1), (1, 2)], 2, 0).unwrap();
        assert!(s.pairs.is_empty());
        assert_eq!(s.skipped, 2);
    }

    #[test]
    fn negative_sampling_respects_exclusions() {
        let g = SparseGraph::from_edges(4, &[(0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = pair_set(&[(0, 2)]);
        let s = sample_negatives_with(&g, &[(0, 1)], 20, &ex, &mut rng).unwrap();
        assert!(s.pairs.iter().all(|&p| p == (0, 3)));
        let all = pair_set(&[(0, 2), (0, 3)]);
        let s = sample_negatives_with(&g, &[(0, 1)], 3, &all, &mut rng).unwrap();
        assert_eq!(s.skipped, 1);
    }

    #[test]
    fn auc_loss_examples() {
        let out = auc_loss(&[2.0], &[0.5], &[0], &[1.0]).unwrap();
        assert_eq!((out.loss, out.grad_pos[0], out.grad_neg[0]), (0.0, 0.0, 0.0));
        let out = auc_loss(&[0.5], &[2.0], &[0], &[1.0]).unwrap();
        assert_eq!(out.loss, 6.25);
        let out = auc_loss(&[0.3], &[0.3], &[0], &[1.0]).unwrap();
        assert_eq!((out.loss, out.grad_pos[0], out.grad_neg[0]), (1.0, -2.0, 2.0));
        assert!(auc_loss(&[f64::NAN], &[0.0], &[0], &[1.0]).is_err());
    }

    #[test]
    fn bce_examples() {
        let out = bce_loss(&[0.0], &[]).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let out = bce_loss(&[20.0], &[]).unwrap();
        assert!((out.loss / 2.061153620314381e-9 - 1.0).abs() < 1e-12, "{}", out.loss);
        let out = bce_loss(&[1.7], &[-1.7]).unwrap();
        assert!((out.grad_pos[0] + out.grad_neg[0]).abs() < 1e-16);
    }

    #[test]
    fn adam_examples() {
        let g = path3();
        let cfg = ModelConfig { use_node_embeddings: true, embedding_dim: 2, mlp_layers: 1, depth: 1, ..Default::default() };
        let params = init_params(&cfg, &g, 0).unwrap();
        let adam_cfg = AdamConfig::default();

        let mut p = params.clone();
        let mut st = AdamState::new(&p);
        let zero = GradientBundle::zeros_like(&p);
        st.step(&mut p, &zero, 0.1, &adam_cfg, &[]).unwrap();
        assert_eq!(p, params);
        assert_eq!(st.t, 1);

        let mut grads = GradientBundle::zeros_like(&params);
        grads.0.betas[1] = 3.0;
        grads.0.betas[0] = -0.5;
        let mut p = params.clone();
        let mut st = AdamState::new(&p);
        st.step(&mut p, &grads, 0.01, &adam_cfg, &[]).unwrap();
        assert!((p.betas[1] - (params.betas[1] - 0.01)).abs() < 1e-9);
        assert!((p.betas[0] - (params.betas[0] + 0.01)).abs() < 1e-9);

        let mut twice = params.clone();
        let mut st = AdamState::new(&twice);
        st.step(&mut twice, &grads, 0.01, &adam_cfg, &[]).unwrap();
        grads.0.betas[1] = 1.0;
        st.step(&mut twice, &grads, 0.01, &adam_cfg, &[]).unwrap();
        let mut once = params.clone();
        AdamState::new(&once).step(&mut once, &grads, 0.02, &adam_cfg, &[]).unwrap();
        assert_ne!(twice.betas[1], once.betas[1]);

        grads.0.betas[1] = f64::INFINITY;
        let mut p = params.clone();
        assert!(AdamState::new(&p).step(&mut p, &grads, 0.01, &adam_cfg, &[]).is_err());
        assert_eq!(p, params);
    }

    #[test]
    fn zero_score_grads_give_zero_bundle() {
        let cfg = gradcheck_model_config(LossKind::Auc);
        let (g, x, params, batch) = random_check_instance(&cfg, 12, 0.3, 5, 1, 3).unwrap();
        let ops = PropagationOperators::new(&g);
        let fwd = model::forward(&params, &ops, x.as_ref(), Mode::Eval).unwrap();
        let pred = model::predict(&params, &fwd.z, &batch.pairs(), Mode::Eval).unwrap();
        let grads = backward(&params, &ops, x.as_ref(), &fwd, &pred, &vec![0.0; pred.scores.len()]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn beta_gradient_closed_form_single_layer() {
        // L = 1, β = (0, 1), one linear predictor layer: s = w·(z_i ⊙ z_j) + b
        // with z = β₁ M X, so ∂s/∂β₁ = 2 w·(m_i ⊙ m_j) where m = M X.
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let cfg = ModelConfig { depth: 1, input_dim: Some(3), hidden_dim: 3, mlp_layers: 1, dropout: 0.0, ..Default::default() };
        let mut params = init_params(&cfg, &g, 5).unwrap();
        params.betas = vec![0.0, 1.0];
        let x = DenseMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) % 5) as f64 * 0.3 - 0.4);
        let ops = PropagationOperators::new(&g);
        let fwd = model::forward(&params, &ops, Some(&x), Mode::Eval).unwrap();
        let pred = model::predict(&params, &fwd.z, &[(0, 2)], Mode::Eval).unwrap();
        let grads = backward(&params, &ops, Some(&x), &fwd, &pred, &[1.0]).unwrap();
        let m = &fwd.layers[1];
        let w = &params.mlp[0].weight;
        let expect: f64 = (0..3).map(|c| 2.0 * w.get(c, 0) * m.get(0, c) * m.get(2, c)).sum();
        assert!((grads.0.betas[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_agree_for_both_losses() {
        for kind in [LossKind::Auc, LossKind::Bce] {
            let cfg = gradcheck_model_config(kind);
            let (g, x, params, batch) = random_check_instance(&cfg, 20, 0.2, 8, 2, 11).unwrap();
            let r = finite_difference_check(&params, &g, x.as_ref(), &batch, kind, 1e-5, 10, 1).unwrap();
            assert!(r.max_rel_err() <= 1e-4, "{kind:?}: {r:?}");
            assert_eq!(r.per_group.len(), 6);
        }
    }

    #[test]
    fn satisfied_hinges_give_zero_gradients() {
        let cfg = gradcheck_model_config(LossKind::Auc);
        let (g, x, params, mut batch) = random_check_instance(&cfg, 15, 0.3, 4, 1, 8).unwrap();
        batch.margins = vec![1e-12; batch.positives.len()];
        let ops = PropagationOperators::new(&g);
        let fwd = model::forward(&params, &ops, x.as_ref(), Mode::Eval).unwrap();
        // Force every positive far above its negatives through the output bias path.
        let pred = model::predict(&params, &fwd.z, &batch.pairs(), Mode::Eval).unwrap();
        let mut scores = pred.scores.clone();
        for s in scores.iter_mut().take(batch.positives.len()) {
            *s += 1e6;
        }
        let (loss, sg) = batch.loss(LossKind::Auc, &scores).unwrap();
        assert_eq!(loss, 0.0);
        assert!(sg.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_params_and_flat_loss() {
        let g = SparseGraph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let cfg = ModelConfig { depth: 2, use_node_embeddings: true, embedding_dim: 4, mlp_layers: 2, mlp_hidden_dim: 4, dropout: 0.0, ..Default::default() };
        let init = init_params(&cfg, &g, 1).unwrap();
        let positives = g.edges();
        let data = TrainingData { graph: &g, features: None, positives: &positives, exclude: &[] };
        let tc = TrainConfig { epochs: 4, learning_rate: 0.0, resample_negatives: false, ..Default::default() };
        let out = fit(&data, &cfg, &tc, init.clone(), None).unwrap();
        assert_eq!(out.params, init);
        let l0 = out.history[0].loss;
        assert!(out.history.iter().all(|r| r.loss == l0));
    }

    #[test]
    fn fit_reduces_loss_and_is_deterministic() {
        let edges: Vec<_> = (0..20).map(|t| (3 * t, 3 * t + 1)).chain((0..20).map(|t| (3 * t + 1, 3 * t + 2))).chain((0..20).map(|t| (3 * t, 3 * t + 2))).collect();
        let g = SparseGraph::from_edges(60, &edges).unwrap();
        let cfg = ModelConfig { depth: 3, use_node_embeddings: true, embedding_dim: 8, mlp_layers: 2, mlp_hidden_dim: 8, dropout: 0.1, beta_init: BetaInit::Uniform, ..Default::default() };
        let init = init_params(&cfg, &g, 2).unwrap();
        let data = TrainingData { graph: &g, features: None, positives: &edges, exclude: &[] };
        let tc = TrainConfig { epochs: 30, learning_rate: 0.01, batch_size: 16, ..Default::default() };
        let a = fit(&data, &cfg, &tc, init.clone(), None).unwrap();
        let b = fit(&data, &cfg, &tc, init, None).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.history.last().unwrap().loss < a.history[0].loss);
    }

    #[test]
    fn predictor_only_freezes_propagation_and_matches_recompute() {
        let g = SparseGraph::from_edges(9, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (6, 7), (7, 8), (6, 8)]).unwrap();
        let cfg = crate::heuristics::heuristic_config(&crate::heuristics::HeuristicId::Cn).unwrap();
        let params = ModelParams::from_formulation(&cfg, 9).unwrap();
        let mut params = params;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        params.mlp = vec![model::Linear::init(9, 4, &mut rng), model::Linear::init(4, 1, &mut rng)];
        let x = DenseMatrix::identity(9);
        let positives = g.edges();
        let data = TrainingData { graph: &g, features: Some(&x), positives: &positives, exclude: &[] };
        let tc = TrainConfig { epochs: 20, learning_rate: 0.01, ..Default::default() };
        let cached = fit_predictor_only(&data, params.clone(), LossKind::Bce, 0.2, &tc, None, false).unwrap();
        let fresh = fit_predictor_only(&data, params.clone(), LossKind::Bce, 0.2, &tc, None, true).unwrap();
        assert_eq!(cached.history, fresh.history);
        assert_eq!(cached.params.betas, params.betas);
        assert_eq!(cached.params.alpha_logits, params.alpha_logits);
        assert_eq!(cached.params.preproc, params.preproc);
        assert_ne!(cached.params.mlp, params.mlp);
        assert!(cached.history.last().unwrap().loss < cached.history[0].loss);
    }

    #[test]
    fn history_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history(&p, &[EpochRecord { epoch: 1, loss: 0.5, val_metric: Some(0.25) }, EpochRecord { epoch: 2, loss: 0.1, val_metric: None }]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "epoch,loss,val_metric\n1,0.5,0.25\n2,0.1,\n");
    }
}
