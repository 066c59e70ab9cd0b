//! Link prediction on sparse graphs: classic heuristics under a single
//! propagation formulation, and a heuristic-learning linear GNN.

pub mod bench;
pub mod cli;
pub mod data;
pub mod dense;
pub mod error;
pub mod eval;
pub mod formulation;
pub mod graph;
pub mod heuristics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod spectral;
pub mod training;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use formulation::{score_pairs_formulation, FormulationConfig, LayerOperator};
pub use graph::{OperatorSpec, PropagationOperators, SparseGraph, SparseOperator};
pub use heuristics::HeuristicId;
pub use model::{Checkpoint, ModelConfig, ModelParams};
