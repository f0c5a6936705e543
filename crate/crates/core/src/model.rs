use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{init_with_rng, EmbeddingTable, FeatureDims, Projections};
use crate::graph::{Choice, ModelZoo, TaskGraph};
use crate::learner::{backward, forward_with, LearnerParams, Neighborhoods};
use crate::linalg::{axpy, Matrix};
use crate::objective::{ChoiceBatch, LossKind};
use crate::params::Parameters;
use crate::scalar::Scalar;

/// Architecture sizes shared by the trainable scorers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the model-embedding table.
    pub model_dim: usize,
    /// Shared feature width and hidden width.
    pub hidden: usize,
    /// Attention layers; ignored by the edge-blind baseline.
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 32,
            hidden: 64,
            layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// A trainable per-choice scorer.
pub trait Scorer<T: Scalar>: Parameters<T> {
    /// Tag stored in checkpoints.
    const KIND: &'static str;

    /// Per-parameter-version precomputation shared across samples.
    type Cache: Send + Sync;

    fn init(zoo: &ModelZoo, input_dim: usize, cfg: &ModelConfig, seed: u64) -> Self;

    fn input_dim(&self) -> usize;

    fn prepare(&self) -> Self::Cache;

    /// Raw logits of `choices` for one sample.
    fn logits(
        &self,
        cache: &Self::Cache,
        x: &[T],
        graph: &TaskGraph,
        choices: &[&Choice],
    ) -> Result<Vec<T>>;

    /// Loss of one sample over `choices` with their labels; parameter
    /// gradients are added into `grads`.
    #[allow(clippy::too_many_arguments)]
    fn loss_and_grad(
        &self,
        cache: &Self::Cache,
        x: &[T],
        graph: &TaskGraph,
        choices: &[&Choice],
        labels: &[bool],
        loss: LossKind,
        grads: &mut Self,
    ) -> Result<T>;
}

/// Embedding table, projections and graph-attention learner.
#[derive(Clone, Debug, PartialEq)]
pub struct M3Model<T> {
    pub table: EmbeddingTable<T>,
    pub proj: Projections<T>,
    pub learner: LearnerParams<T>,
}

pub struct M3Cache<T> {
    /// Every table row already multiplied by `W2`.
    projected: Matrix<T>,
}

impl<T: Scalar> M3Model<T> {
    pub fn dims(&self) -> FeatureDims {
        FeatureDims {
            input: self.proj.w1.rows(),
            model: self.table.dim(),
            shared: self.proj.out_dim(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.proj.w1.rows() {
            return Err(Error::DimensionMismatch {
                context: "input embedding".into(),
                expected: self.proj.w1.rows(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn node_matrix(
        &self,
        cache: &M3Cache<T>,
        h0: &[T],
        graph: &TaskGraph,
        choice: &Choice,
    ) -> Matrix<T> {
        let mut h = Matrix::zeros(graph.n_nodes(), h0.len());
        h.row_mut(0).copy_from_slice(h0);
        for (k, &t) in graph.node_types.iter().enumerate() {
            let r = self.table.row_index(t, choice.model_for(t));
            h.row_mut(k + 1).copy_from_slice(cache.projected.row(r));
        }
        h
    }
}

impl<T: Scalar> Parameters<T> for M3Model<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut out = vec![
            self.table.weights.as_slice(),
            self.proj.w1.as_slice(),
            self.proj.w2.as_slice(),
        ];
        out.extend(self.learner.slices());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![
            self.table.weights.as_mut_slice(),
            self.proj.w1.as_mut_slice(),
            self.proj.w2.as_mut_slice(),
        ];
        out.extend(self.learner.slices_mut());
        out
    }
}

impl<T: Scalar> Scorer<T> for M3Model<T> {
    const KIND: &'static str = "m3";
    type Cache = M3Cache<T>;

    fn init(zoo: &ModelZoo, input_dim: usize, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = FeatureDims {
            input: input_dim,
            model: cfg.model_dim,
            shared: cfg.hidden,
        };
        let (table, proj) = init_with_rng(zoo, dims, &mut rng);
        let widths = vec![cfg.hidden; cfg.layers + 1];
        let learner = LearnerParams::init_with_rng(&widths, &mut rng);
        Self {
            table,
            proj,
            learner,
        }
    }

    fn input_dim(&self) -> usize {
        self.proj.w1.rows()
    }

    fn prepare(&self) -> M3Cache<T> {
        M3Cache {
            projected: self.table.weights.matmul(&self.proj.w2),
        }
    }

    fn logits(
        &self,
        cache: &M3Cache<T>,
        x: &[T],
        graph: &TaskGraph,
        choices: &[&Choice],
    ) -> Result<Vec<T>> {
        self.check_input(x)?;
        let h0 = self.proj.w1.left_mul(x);
        let nbrs = Neighborhoods::new(graph.n_nodes(), &graph.edges)?;
        choices
            .iter()
            .map(|c| {
                let h = self.node_matrix(cache, &h0, graph, c);
                forward_with(&h, nbrs.clone(), &self.learner).map(|(s, _)| s)
            })
            .collect()
    }

    fn loss_and_grad(
        &self,
        cache: &M3Cache<T>,
        x: &[T],
        graph: &TaskGraph,
        choices: &[&Choice],
        labels: &[bool],
        loss: LossKind,
        grads: &mut Self,
    ) -> Result<T> {
        self.check_input(x)?;
        let h0 = self.proj.w1.left_mul(x);
        let nbrs = Neighborhoods::new(graph.n_nodes(), &graph.edges)?;
        let mut tapes = Vec::with_capacity(choices.len());
        let mut logits = Vec::with_capacity(choices.len());
        for c in choices {
            let h = self.node_matrix(cache, &h0, graph, c);
            let (s, tape) = forward_with(&h, nbrs.clone(), &self.learner)?;
            logits.push(s);
            tapes.push(tape);
        }
        let (value, d_logits) = loss.evaluate(&ChoiceBatch::dense(&logits, labels));

        let d = self.proj.out_dim();
        let mut d_h0 = vec![T::zero(); d];
        let mut d_proj = Matrix::zeros(self.table.n_entries(), d);
        let mut touched = vec![false; self.table.n_entries()];
        for ((tape, c), &ds) in tapes.iter().zip(choices).zip(&d_logits) {
            let dh = backward(tape, &self.learner, ds, &mut grads.learner);
            axpy(T::one(), dh.row(0), &mut d_h0);
            for (k, &t) in graph.node_types.iter().enumerate() {
                let r = self.table.row_index(t, c.model_for(t));
                touched[r] = true;
                axpy(T::one(), dh.row(k + 1), d_proj.row_mut(r));
            }
        }
        grads.proj.w1.add_outer(x, &d_h0);
        for r in (0..touched.len()).filter(|&r| touched[r]) {
            let g = d_proj.row(r);
            grads.proj.w2.add_outer(self.table.weights.row(r), g);
            let back = self.proj.w2.mul_transpose(g);
            axpy(T::one(), &back, grads.table.weights.row_mut(r));
        }
        Ok(value)
    }
}
