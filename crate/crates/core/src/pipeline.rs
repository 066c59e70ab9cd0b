//! Run configuration and the prepare → train → evaluate path shared by the
//! command line and the test suites.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{self, SynthKind};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::eval::{split_edges, EdgeSplit, EvalReport, Metric};
use crate::graph::{PropagationOperators, SparseGraph};
use crate::model::{self, Checkpoint, ModelConfig};
use crate::training::{self, FitResult, TrainConfig, TrainingData, Validation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SynthKind,
    /// Number of components; the kind's default when absent.
    #[serde(default)]
    pub size: Option<usize>,
}

impl SyntheticConfig {
    pub fn size(&self) -> usize {
        self.size.unwrap_or(self.kind.default_size())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Existing split file; otherwise a split is drawn.
    pub split: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Defaults to the training seed.
    pub split_seed: Option<u64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            edges: None,
            features: None,
            split: None,
            synthetic: None,
            valid_ratio: 0.05,
            test_ratio: 0.1,
            split_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metric: Metric,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { metric: Metric::HitsAt(100) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses a config file; relative data paths resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let mut cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let d = &mut cfg.dataset;
        for p in [&mut d.edges, &mut d.features, &mut d.split].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.dataset;
        match (&d.edges, &d.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => {
                if s.size() == 0 {
                    return Err(Error::InvalidParameter("synthetic size must be at least 1".into()));
                }
                if d.features.is_some() {
                    return Err(Error::InvalidParameter("synthetic datasets have no feature file".into()));
                }
            }
            _ => {
                return Err(Error::InvalidParameter(
                    "dataset needs exactly one of `edges` or `synthetic`".into(),
                ))
            }
        }
        for r in [d.valid_ratio, d.test_ratio] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidParameter(format!("split ratio {r} outside [0, 1)")));
            }
        }
        if d.valid_ratio + d.test_ratio >= 1.0 {
            return Err(Error::InvalidParameter("split ratios must sum below 1".into()));
        }
        if d.features.is_none() && d.edges.is_some() && !self.model.use_node_embeddings {
            return Err(Error::InvalidParameter(
                "without a feature file the model needs use_node_embeddings".into(),
            ));
        }
        Ok(())
    }
}

/// Data ready for training: the propagation graph, features and split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub name: String,
    pub num_nodes: usize,
    pub graph: SparseGraph,
    pub features: Option<DenseMatrix>,
    pub split: EdgeSplit,
}

pub fn prepare(cfg: &DatasetConfig, seed: u64) -> Result<Prepared> {
    let split_seed = cfg.split_seed.unwrap_or(seed);
    let (name, num_nodes, features, split) = match (&cfg.edges, &cfg.synthetic) {
        (None, Some(s)) => {
            let split = match &cfg.split {
                Some(p) => data::load_split(p)?,
                None => data::case_study_split(s.kind, s.size(), cfg.valid_ratio, cfg.test_ratio, split_seed)?,
            };
            (s.kind.to_string(), s.kind.cycle_len() * s.size(), None, split)
        }
        (Some(edges), None) => {
            let ds = data::load_dataset(edges, cfg.features.as_deref())?;
            let split = match &cfg.split {
                Some(p) => data::load_split(p)?,
                None => split_edges(&ds.graph, cfg.valid_ratio, cfg.test_ratio, split_seed)?,
            };
            (ds.name.clone(), ds.num_nodes(), ds.features, split)
        }
        _ => {
            return Err(Error::InvalidParameter(
                "dataset needs exactly one of `edges` or `synthetic`".into(),
            ))
        }
    };
    if let Some(m) = split.max_node() {
        if m >= num_nodes {
            return Err(Error::NodeOutOfRange { id: m, num_nodes });
        }
    }
    let graph = split.train_graph(num_nodes)?;
    info!(
        "{name}: {num_nodes} nodes, {} propagation edges, {} valid / {} test positives",
        graph.num_edges(),
        split.valid_pos.len(),
        split.test_pos.len()
    );
    Ok(Prepared {
        name,
        num_nodes,
        graph,
        features,
        split,
    })
}

/// Fills `input_dim` from the features and checks the two agree.
pub fn resolve_model(model: &ModelConfig, features: Option<&DenseMatrix>) -> Result<ModelConfig> {
    let mut m = model.clone();
    match (m.input_dim, features) {
        (None, Some(x)) => m.input_dim = Some(x.cols()),
        (Some(f), Some(x)) if f != x.cols() => {
            return Err(Error::DimensionMismatch(format!(
                "model.input_dim is {f}, features have {} columns",
                x.cols()
            )))
        }
        (Some(_), None) => {
            return Err(Error::InvalidParameter("model.input_dim is set but no features are given".into()))
        }
        _ => {}
    }
    m.validate()?;
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub fit: FitResult,
    pub test: Option<EvalReport>,
}

/// Initializes from `cfg.train.seed`, fits on the split's supervision
/// positives with validation-based selection, and reports the test metric.
pub fn run_training(cfg: &RunConfig, prepared: &Prepared) -> Result<RunOutcome> {
    let model_cfg = resolve_model(&cfg.model, prepared.features.as_ref())?;
    cfg.train.validate()?;
    let init = model::init_params(&model_cfg, &prepared.graph, cfg.train.seed)?;
    let split = &prepared.split;
    let data = TrainingData {
        graph: &prepared.graph,
        features: prepared.features.as_ref(),
        positives: split.supervision_positives(),
        exclude: &[],
    };
    let valid = Validation {
        positives: &split.valid_pos,
        negatives: &split.valid_neg,
        metric: cfg.eval.metric,
    };
    let has_valid = !split.valid_pos.is_empty() && !split.valid_neg.is_empty();
    let fit = training::fit(&data, &model_cfg, &cfg.train, init, has_valid.then_some(&valid))?;
    let checkpoint = Checkpoint::new(model_cfg, fit.params.clone(), prepared.num_nodes);
    let test = if split.test_pos.is_empty() || split.test_neg.is_empty() {
        None
    } else {
        Some(evaluate(&checkpoint, &prepared.graph, prepared.features.as_ref(), &split.test_pos, &split.test_neg, cfg.eval.metric, split.seed)?)
    };
    Ok(RunOutcome { checkpoint, fit, test })
}

/// Scores positives and negatives with a checkpoint on the given
/// propagation graph.
pub fn evaluate(
    checkpoint: &Checkpoint,
    graph: &SparseGraph,
    features: Option<&DenseMatrix>,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    metric: Metric,
    seed: u64,
) -> Result<EvalReport> {
    checkpoint.check_graph(graph)?;
    let ops = PropagationOperators::new(graph);
    let z = model::propagate(&checkpoint.params, &ops, features)?;
    let pos = model::predict_links(&checkpoint.params, &z, positives)?;
    let neg = model::predict_links(&checkpoint.params, &z, negatives)?;
    EvalReport::compute(metric, &pos, &neg, seed)
}

/// Index of the largest `|β|`, first one on ties.
pub fn beta_argmax(betas: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (l, b) in betas.iter().enumerate() {
        if best.is_none_or(|(_, m)| b.abs() > m) {
            best = Some((l, b.abs()));
        }
    }
    best.map(|(l, _)| l)
}

/// Model and training settings for the triangle/hexagon study: depth 20,
/// trainable 64-wide embeddings, otherwise the library defaults.
pub fn case_study_config(kind: SynthKind, seed: u64) -> RunConfig {
    RunConfig {
        dataset: DatasetConfig {
            synthetic: Some(SyntheticConfig { kind, size: None }),
            valid_ratio: 0.1,
            test_ratio: 0.1,
            ..Default::default()
        },
        model: ModelConfig {
            depth: 20,
            use_node_embeddings: true,
            embedding_dim: 64,
            hidden_dim: 64,
            mlp_hidden_dim: 64,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 100,
            seed,
            ..Default::default()
        },
        eval: EvalConfig { metric: Metric::Auc },
    }
}

/// Published Cora settings: depth 20, hidden width equal to the 1433 raw
/// features, RWR init with α = 0.2, a 3-layer 8192-wide predictor, BCE,
/// lr 0.001, 100 epochs, dropout 0.5 and a 5%/10% split. `dir` holds
/// `edges.txt` and `features.csv` (or `features.bin`).
pub fn cora_config(dir: &Path, seed: u64) -> RunConfig {
    let features = ["features.csv", "features.bin"]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .unwrap_or_else(|| dir.join("features.csv"));
    RunConfig {
        dataset: DatasetConfig {
            edges: Some(dir.join("edges.txt")),
            features: Some(features),
            valid_ratio: 0.05,
            test_ratio: 0.1,
            ..Default::default()
        },
        model: ModelConfig {
            depth: 20,
            hidden_dim: 1433,
            mlp_layers: 3,
            mlp_hidden_dim: 8192,
            beta_init: model::BetaInit::Rwr { alpha: 0.2 },
            dropout: 0.5,
            loss: model::LossKind::Bce,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 100,
            learning_rate: 0.001,
            seed,
            ..Default::default()
        },
        eval: EvalConfig { metric: Metric::HitsAt(100) },
    }
}
