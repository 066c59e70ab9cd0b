//! The heuristic-learning GNN: a linear input block, `L` layers of
//! mixed-operator propagation aggregated with learnable per-order weights,
//! and an MLP scoring node pairs from the Hadamard product of their rows.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::formulation::{FormulationConfig, LayerOperator, MAX_DENSE_NODES};
use crate::graph::{OperatorSpec, PropagationOperators, SparseGraph, SparseOperator};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Starting shape of the per-order weights `β_0..β_L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaInit {
    /// `β_l = γ^l`, including `β_0 = 1`.
    Ki { gamma: f64 },
    /// `β_l = (1−α)α^l`.
    Rwr { alpha: f64 },
    /// Independent standard normals.
    Random,
    /// `β_l = 1/(L+1)`.
    Uniform,
    /// `β_l = γ^{L−l}`.
    ReverseKi { gamma: f64 },
    /// `β_L = 1`, all others 0.
    FinalLayer,
}

impl BetaInit {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaInit::Ki { gamma: v } | BetaInit::Rwr { alpha: v } | BetaInit::ReverseKi { gamma: v }
                if !(v > 0.0 && v < 1.0) =>
            {
                Err(Error::InvalidParameter(format!("beta init parameter must lie in (0, 1), got {v}")))
            }
            _ => Ok(()),
        }
    }

    pub fn betas(&self, depth: usize, rng: &mut impl Rng) -> Vec<f64> {
        let n = depth + 1;
        match *self {
            BetaInit::Ki { gamma } => (0..n).map(|l| gamma.powi(l as i32)).collect(),
            BetaInit::Rwr { alpha } => (0..n).map(|l| (1.0 - alpha) * alpha.powi(l as i32)).collect(),
            BetaInit::Random => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            BetaInit::Uniform => vec![1.0 / n as f64; n],
            BetaInit::ReverseKi { gamma } => (0..n).map(|l| gamma.powi((depth - l) as i32)).collect(),
            BetaInit::FinalLayer => (0..n).map(|l| if l == depth { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Auc,
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    /// Width of the node feature matrix; `None` for feature-less graphs.
    pub input_dim: Option<usize>,
    pub hidden_dim: usize,
    pub use_node_embeddings: bool,
    pub embedding_dim: usize,
    /// Number of linear layers in the predictor, the last one scalar.
    pub mlp_layers: usize,
    pub mlp_hidden_dim: usize,
    pub beta_init: BetaInit,
    pub dropout: f64,
    pub loss: LossKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 20,
            input_dim: None,
            hidden_dim: 256,
            use_node_embeddings: false,
            embedding_dim: 64,
            mlp_layers: 3,
            mlp_hidden_dim: 256,
            beta_init: BetaInit::Rwr { alpha: 0.2 },
            dropout: 0.5,
            loss: LossKind::Bce,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.input_dim == Some(0) {
            return bad("input_dim must be positive when present".into());
        }
        if self.input_dim.is_none() && !self.use_node_embeddings {
            return bad("a model without input features needs node embeddings".into());
        }
        if self.input_dim.is_some() && self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.use_node_embeddings && self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.mlp_layers == 0 {
            return bad("mlp_layers must be at least 1".into());
        }
        if self.mlp_layers > 1 && self.mlp_hidden_dim == 0 {
            return bad("mlp_hidden_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        self.beta_init.validate()
    }

    /// Width of `X` and `Z`.
    pub fn representation_dim(&self) -> usize {
        match self.input_dim {
            Some(_) => self.hidden_dim,
            None => self.embedding_dim,
        }
    }
}

/// Dense affine map `x ↦ xW + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform in `±1/√in` for weights and bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Linear {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Linear {
            weight: DenseMatrix::from_fn(inputs, outputs, |_, _| rng.gen_range(-bound..bound)),
            bias: (0..outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn identity(n: usize) -> Linear {
        Linear {
            weight: DenseMatrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_vector(&self.bias);
        Ok(y)
    }

    fn zeros_like(&self) -> Linear {
        Linear {
            weight: DenseMatrix::zeros(self.inputs(), self.outputs()),
            bias: vec![0.0; self.outputs()],
        }
    }
}

/// Parameter groups, used for freezing and per-group gradient reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Alpha,
    Beta,
    Preproc,
    Embedding,
    Combine,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Pre-softmax operator weights per layer in (rs, cs, sym) order.
    pub alpha_logits: Vec<[f64; 3]>,
    pub betas: Vec<f64>,
    pub preproc: Option<Linear>,
    pub node_embeddings: Option<DenseMatrix>,
    /// Re-projection of `[preproc(features), embeddings]` back to the hidden width.
    pub combine: Option<Linear>,
    pub mlp: Vec<Linear>,
    /// Non-trainable per-layer operators replacing the learned mixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_operators: Option<Vec<OperatorSpec>>,
}

/// Numerically stable softmax of one logit row.
pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = logits.map(|x| (x - m).exp());
    let s = e[0] + e[1] + e[2];
    e.map(|x| x / s)
}

pub fn init_params(cfg: &ModelConfig, g: &SparseGraph, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas = cfg.beta_init.betas(cfg.depth, &mut rng);
    let preproc = cfg.input_dim.map(|f| Linear::init(f, cfg.hidden_dim, &mut rng));
    let node_embeddings = cfg.use_node_embeddings.then(|| {
        let n = g.num_nodes();
        let bound = (6.0 / (n + cfg.embedding_dim) as f64).sqrt();
        DenseMatrix::from_fn(n, cfg.embedding_dim, |_, _| rng.gen_range(-bound..bound))
    });
    let combine = (preproc.is_some() && node_embeddings.is_some())
        .then(|| Linear::init(cfg.hidden_dim + cfg.embedding_dim, cfg.hidden_dim, &mut rng));
    let mut mlp = Vec::with_capacity(cfg.mlp_layers);
    let mut width = cfg.representation_dim();
    for k in 0..cfg.mlp_layers {
        let out = if k + 1 == cfg.mlp_layers { 1 } else { cfg.mlp_hidden_dim };
        mlp.push(Linear::init(width, out, &mut rng));
        width = out;
    }
    Ok(ModelParams {
        alpha_logits: vec![[0.0; 3]; cfg.depth],
        betas,
        preproc,
        node_embeddings,
        combine,
        mlp,
        fixed_operators: None,
    })
}

impl ModelParams {
    pub fn depth(&self) -> usize {
        self.alpha_logits.len()
    }

    /// Softmaxed mixture weights per layer.
    pub fn alphas(&self) -> Vec<[f64; 3]> {
        self.alpha_logits.iter().map(|&l| softmax3(l)).collect()
    }

    /// A propagation-only model realizing `cfg` on identity features of
    /// width `n`: `Z = H_model X` with `H_model` the transpose of `cfg`'s
    /// matrix, so `Z[j][i]` is the formulation's `(i, j)` entry. Mixed
    /// factors become logits whose softmax equals the transposed mixture.
    pub fn from_formulation(cfg: &FormulationConfig, n: usize) -> Result<ModelParams> {
        cfg.validate()?;
        let mut fixed = Vec::new();
        let mut logits = Vec::new();
        for op in &cfg.operators {
            match op.transpose() {
                LayerOperator::Fixed(spec) => {
                    fixed.push(Some(spec));
                    logits.push([0.0; 3]);
                }
                LayerOperator::Mixed(a) => {
                    if a.iter().any(|&x| x <= 0.0) {
                        return Err(Error::InvalidParameter(
                            "mixtures with zero weights have no finite logits".into(),
                        ));
                    }
                    fixed.push(None);
                    logits.push(a.map(f64::ln));
                }
            }
        }
        let fixed_operators = if fixed.iter().all(Option::is_some) {
            Some(fixed.into_iter().flatten().collect())
        } else if fixed.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::InvalidParameter(
                "formulation mixes fixed and mixed factors".into(),
            ));
        };
        Ok(ModelParams {
            alpha_logits: logits,
            betas: cfg.betas.clone(),
            preproc: Some(Linear::identity(n)),
            node_embeddings: None,
            combine: None,
            mlp: vec![Linear {
                weight: DenseMatrix::from_fn(n, 1, |_, _| 1.0),
                bias: vec![0.0],
            }],
            fixed_operators,
        })
    }

    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let l = self.depth();
        if self.betas.len() != l + 1 {
            return Err(Error::DimensionMismatch(format!("{} betas for depth {l}", self.betas.len())));
        }
        if let Some(f) = &self.fixed_operators {
            if f.len() != l {
                return Err(Error::DimensionMismatch(format!("{} fixed operators for depth {l}", f.len())));
            }
        }
        if let Some(e) = &self.node_embeddings {
            if e.rows() != num_nodes {
                return Err(Error::DimensionMismatch(format!(
                    "embeddings for {} nodes, graph has {num_nodes}",
                    e.rows()
                )));
            }
        }
        let mut width = self.representation_dim();
        if let (Some(c), Some(p), Some(e)) = (&self.combine, &self.preproc, &self.node_embeddings) {
            if c.inputs() != p.outputs() + e.cols() {
                return Err(Error::DimensionMismatch("re-projection input width".into()));
            }
        }
        if self.mlp.is_empty() {
            return Err(Error::DimensionMismatch("empty predictor".into()));
        }
        for layer in &self.mlp {
            if layer.inputs() != width || layer.bias.len() != layer.outputs() {
                return Err(Error::DimensionMismatch("predictor layer widths".into()));
            }
            width = layer.outputs();
        }
        if width != 1 {
            return Err(Error::DimensionMismatch("predictor must end in a scalar".into()));
        }
        if self.tensors().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn representation_dim(&self) -> usize {
        match (&self.combine, &self.preproc, &self.node_embeddings) {
            (Some(c), _, _) => c.outputs(),
            (None, Some(p), _) => p.outputs(),
            (None, None, Some(e)) => e.cols(),
            (None, None, None) => 0,
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.preproc.as_ref().map(Linear::inputs)
    }

    /// Every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = vec![
            (ParamGroup::Alpha, self.alpha_logits.as_flattened()),
            (ParamGroup::Beta, &self.betas),
        ];
        if let Some(p) = &self.preproc {
            out.push((ParamGroup::Preproc, p.weight.as_slice()));
            out.push((ParamGroup::Preproc, &p.bias));
        }
        if let Some(e) = &self.node_embeddings {
            out.push((ParamGroup::Embedding, e.as_slice()));
        }
        if let Some(c) = &self.combine {
            out.push((ParamGroup::Combine, c.weight.as_slice()));
            out.push((ParamGroup::Combine, &c.bias));
        }
        for layer in &self.mlp {
            out.push((ParamGroup::Mlp, layer.weight.as_slice()));
            out.push((ParamGroup::Mlp, &layer.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = vec![
            (ParamGroup::Alpha, self.alpha_logits.as_flattened_mut()),
            (ParamGroup::Beta, &mut self.betas),
        ];
        if let Some(p) = &mut self.preproc {
            out.push((ParamGroup::Preproc, p.weight.as_mut_slice()));
            out.push((ParamGroup::Preproc, &mut p.bias));
        }
        if let Some(e) = &mut self.node_embeddings {
            out.push((ParamGroup::Embedding, e.as_mut_slice()));
        }
        if let Some(c) = &mut self.combine {
            out.push((ParamGroup::Combine, c.weight.as_mut_slice()));
            out.push((ParamGroup::Combine, &mut c.bias));
        }
        for layer in &mut self.mlp {
            out.push((ParamGroup::Mlp, layer.weight.as_mut_slice()));
            out.push((ParamGroup::Mlp, &mut layer.bias));
        }
        out
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            alpha_logits: vec![[0.0; 3]; self.depth()],
            betas: vec![0.0; self.betas.len()],
            preproc: self.preproc.as_ref().map(Linear::zeros_like),
            node_embeddings: self
                .node_embeddings
                .as_ref()
                .map(|e| DenseMatrix::zeros(e.rows(), e.cols())),
            combine: self.combine.as_ref().map(Linear::zeros_like),
            mlp: self.mlp.iter().map(Linear::zeros_like).collect(),
            fixed_operators: self.fixed_operators.clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Training mode draws dropout masks from `rng`; evaluation mode is
/// deterministic and mask-free.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

impl Mode<'_> {
    pub(crate) fn draw_mask(&mut self, len: usize) -> Option<Vec<f64>> {
        match self {
            Mode::Train { dropout, rng } if *dropout > 0.0 => {
                let keep = 1.0 - *dropout;
                Some(
                    (0..len)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardState {
    /// `preproc(features)` when features are used.
    pub(crate) preprocessed: Option<DenseMatrix>,
    /// `[preproc(features), embeddings]` when re-projected.
    pub(crate) concatenated: Option<DenseMatrix>,
    /// `Z^(0) = X` through `Z^(L)`.
    pub layers: Vec<DenseMatrix>,
    pub(crate) operators: Vec<SparseOperator>,
    pub alphas: Vec<[f64; 3]>,
    pub(crate) z_mask: Option<Vec<f64>>,
    /// Aggregated representation after dropout.
    pub z: DenseMatrix,
}

fn layer_operators(params: &ModelParams, ops: &PropagationOperators) -> Vec<SparseOperator> {
    match &params.fixed_operators {
        Some(specs) => specs.iter().map(|&s| ops.get(s).clone()).collect(),
        None => params.alphas().into_iter().map(|a| ops.mix_unchecked(a)).collect(),
    }
}

/// Builds `X` from features and/or embeddings.
fn input_block(
    params: &ModelParams,
    features: Option<&DenseMatrix>,
) -> Result<(DenseMatrix, Option<DenseMatrix>, Option<DenseMatrix>)> {
    let preprocessed = match (&params.preproc, features) {
        (Some(p), Some(f)) => {
            if f.cols() != p.inputs() {
                return Err(Error::DimensionMismatch(format!(
                    "features have {} columns, model expects {}",
                    f.cols(),
                    p.inputs()
                )));
            }
            Some(p.apply(f)?)
        }
        (Some(_), None) => {
            return Err(Error::InvalidParameter("model expects node features".into()));
        }
        (None, _) => None,
    };
    match (preprocessed, &params.node_embeddings, &params.combine) {
        (Some(p), Some(e), Some(c)) => {
            let cat = p.hcat(e)?;
            let x = c.apply(&cat)?;
            Ok((x, Some(p), Some(cat)))
        }
        (Some(p), None, _) => Ok((p.clone(), Some(p), None)),
        (None, Some(e), _) => Ok((e.clone(), None, None)),
        _ => Err(Error::InvalidParameter(
            "missing features and node embeddings".into(),
        )),
    }
}

/// `Z^(0) = X`, `Z^(l) = M_l Z^(l−1)`, `Z = Σ β_l Z^(l)`, then dropout in
/// training mode.
pub fn forward(
    params: &ModelParams,
    ops: &PropagationOperators,
    features: Option<&DenseMatrix>,
    mut mode: Mode<'_>,
) -> Result<ForwardState> {
    let n = ops.dim();
    params.validate(n)?;
    if let Some(f) = features {
        if f.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows, graph has {n} nodes",
                f.rows()
            )));
        }
    }
    let (x, preprocessed, concatenated) = input_block(params, features)?;
    if x.rows() != n {
        return Err(Error::DimensionMismatch(format!("input block has {} rows, graph has {n}", x.rows())));
    }
    let operators = layer_operators(params, ops);
    let mut z = x.clone();
    z.scale(params.betas[0]);
    let mut layers = Vec::with_capacity(params.depth() + 1);
    layers.push(x);
    for (op, &beta) in operators.iter().zip(&params.betas[1..]) {
        let next = op.spmm(layers.last().expect("nonempty"))?;
        z.add_scaled(beta, &next)?;
        layers.push(next);
    }
    let z_mask = mode.draw_mask(z.as_slice().len());
    if let Some(mask) = &z_mask {
        z.as_mut_slice().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    Ok(ForwardState {
        preprocessed,
        concatenated,
        layers,
        operators,
        alphas: params.alphas(),
        z_mask,
        z,
    })
}

/// Evaluation-mode `Z` without keeping the per-layer activations: two
/// buffers alternate across layers. Bitwise equal to
/// `forward(.., Mode::Eval).z`.
pub fn propagate(params: &ModelParams, ops: &PropagationOperators, features: Option<&DenseMatrix>) -> Result<DenseMatrix> {
    let n = ops.dim();
    params.validate(n)?;
    if let Some(f) = features {
        if f.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows, graph has {n} nodes",
                f.rows()
            )));
        }
    }
    let (mut cur, _, _) = input_block(params, features)?;
    if cur.rows() != n {
        return Err(Error::DimensionMismatch(format!("input block has {} rows, graph has {n}", cur.rows())));
    }
    let mut z = cur.clone();
    z.scale(params.betas[0]);
    let mut next = DenseMatrix::zeros(n, cur.cols());
    for (op, &beta) in layer_operators(params, ops).iter().zip(&params.betas[1..]) {
        op.spmm_into(&cur, &mut next)?;
        z.add_scaled(beta, &next)?;
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(z)
}

/// Evaluation-mode node representations.
pub fn embed(params: &ModelParams, g: &SparseGraph, features: Option<&DenseMatrix>) -> Result<DenseMatrix> {
    propagate(params, &PropagationOperators::new(g), features)
}

/// Cached activations of one predictor evaluation.
pub struct PredictorState {
    pub pairs: Vec<(usize, usize)>,
    /// Input to each linear layer; entry 0 is the Hadamard product.
    pub(crate) inputs: Vec<DenseMatrix>,
    /// Pre-activation of each hidden layer.
    pub(crate) pre_activations: Vec<DenseMatrix>,
    /// Dropout mask applied after each hidden activation.
    pub(crate) masks: Vec<Option<Vec<f64>>>,
    pub scores: Vec<f64>,
}

/// `s_ij = MLP(z_i ⊙ z_j)` with rectified hidden layers and a linear output.
pub fn predict(
    params: &ModelParams,
    z: &DenseMatrix,
    pairs: &[(usize, usize)],
    mut mode: Mode<'_>,
) -> Result<PredictorState> {
    let f = z.cols();
    if params.mlp.first().map(Linear::inputs) != Some(f) {
        return Err(Error::DimensionMismatch(format!(
            "predictor expects width {:?}, representations have {f}",
            params.mlp.first().map(Linear::inputs)
        )));
    }
    let mut h = DenseMatrix::zeros(pairs.len(), f);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        if i >= z.rows() || j >= z.rows() {
            return Err(Error::NodeOutOfRange {
                id: i.max(j),
                num_nodes: z.rows(),
            });
        }
        let (zi, zj) = (z.row(i), z.row(j));
        for ((o, a), b) in h.row_mut(p).iter_mut().zip(zi).zip(zj) {
            *o = a * b;
        }
    }
    let last = params.mlp.len() - 1;
    let mut inputs = Vec::with_capacity(params.mlp.len());
    let mut pre_activations = Vec::with_capacity(last);
    let mut masks = Vec::with_capacity(last);
    for (k, layer) in params.mlp.iter().enumerate() {
        let a = layer.apply(&h)?;
        inputs.push(h);
        if k == last {
            h = a;
            break;
        }
        let mut act = a.clone();
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mask = mode.draw_mask(act.as_slice().len());
        if let Some(m) = &mask {
            act.as_mut_slice().iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        pre_activations.push(a);
        masks.push(mask);
        h = act;
    }
    Ok(PredictorState {
        pairs: pairs.to_vec(),
        inputs,
        pre_activations,
        masks,
        scores: h.into_vec(),
    })
}

/// Evaluation-mode pair scores.
pub fn predict_links(params: &ModelParams, z: &DenseMatrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    Ok(predict(params, z, pairs, Mode::Eval)?.scores)
}

/// The learned propagation expressed as a heuristic formulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterializedFormulation {
    pub depth: usize,
    pub betas: Vec<f64>,
    /// Softmaxed (rs, cs, sym) weights per layer, in propagation order.
    pub alphas: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_operators: Option<Vec<OperatorSpec>>,
    /// Left-to-right factors whose matrix is `H_modelᵀ`: entry `(i, j)` is
    /// the heuristic score of the pair.
    pub formulation: FormulationConfig,
    /// `H_model = Σ β_l M_l ⋯ M_1`, satisfying `Z = H_model X`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_h: Option<DenseMatrix>,
}

pub fn materialize_formulation(
    params: &ModelParams,
    g: &SparseGraph,
    with_dense: bool,
) -> Result<MaterializedFormulation> {
    let n = g.num_nodes();
    let alphas = params.alphas();
    let layer_ops: Vec<LayerOperator> = match &params.fixed_operators {
        Some(specs) => specs.iter().map(|&s| LayerOperator::Fixed(s)).collect(),
        None => alphas.iter().map(|&a| LayerOperator::Mixed(a)).collect(),
    };
    let formulation = FormulationConfig::new(
        layer_ops.iter().map(|op| op.transpose()).collect(),
        params.betas.clone(),
    )?;
    let dense_h = if with_dense {
        if n > MAX_DENSE_NODES {
            return Err(Error::LimitExceeded(format!(
                "dense export limited to {MAX_DENSE_NODES} nodes, graph has {n}"
            )));
        }
        let ops = PropagationOperators::new(g);
        let mut prefix = DenseMatrix::identity(n);
        let mut h = DenseMatrix::identity(n);
        h.scale(params.betas[0]);
        for (op, &beta) in layer_ops.iter().zip(&params.betas[1..]) {
            let m = match *op {
                LayerOperator::Fixed(s) => ops.get(s).clone(),
                LayerOperator::Mixed(a) => ops.mix_unchecked(a),
            };
            prefix = m.spmm(&prefix)?;
            h.add_scaled(beta, &prefix)?;
        }
        Some(h)
    } else {
        None
    };
    Ok(MaterializedFormulation {
        depth: params.depth(),
        betas: params.betas.clone(),
        alphas,
        fixed_operators: params.fixed_operators.clone(),
        formulation,
        dense_h,
    })
}

/// Versioned model container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub num_nodes: usize,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, num_nodes: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            num_nodes,
            config,
            params,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let text = fs::read_to_string(path)?;
        let probe: serde_json::Value = serde_json::from_str(&text)?;
        let found = probe.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(probe)?;
        ck.params.validate(ck.num_nodes)?;
        Ok(ck)
    }

    /// Fails unless the checkpoint was built for a graph of this size.
    pub fn check_graph(&self, g: &SparseGraph) -> Result<()> {
        if g.num_nodes() != self.num_nodes {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint is for {} nodes, graph has {}",
                self.num_nodes,
                g.num_nodes()
            )));
        }
        Ok(())
    }
}
