//! Learned model selection for multi-step reasoning pipelines.
//!
//! A task is a DAG of typed subtasks; every subtask type has a zoo of
//! candidate models. A graph-attention scorer rates each joint assignment
//! of models and the selector returns the best-scoring one, optionally
//! restricted to models that fit a time budget.

pub mod baselines;
pub mod benchmark;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod learner;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod program;
pub mod scalar;
pub mod selector;
pub mod trainer;

pub use baselines::NcfModel;
pub use error::{Error, Result};
pub use graph::{
    Category, Choice, ChoiceSpace, Dataset, ModelInfo, ModelZoo, Sample, SubtaskKind, SubtaskType,
    TaskGraph,
};
pub use model::{M3Model, ModelConfig, Scorer};
pub use params::Parameters;
pub use scalar::Scalar;

pub type M3Model64 = M3Model<f64>;
pub type M3Model32 = M3Model<f32>;
pub type NcfModel64 = NcfModel<f64>;
