//! Input embeddings, the per-model embedding table and the projections that
//! map both into the learner's feature space.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Choice, ModelZoo, Sample, TaskGraph};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// One line of the feature ingestion format.
#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub sample_id: String,
    pub embedding: Vec<f64>,
}

/// Precomputed input embeddings keyed by sample id, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, embedding: Vec<f64>) -> Result<()> {
        let sample_id = sample_id.into();
        if self.ids.is_empty() && self.dim == 0 {
            self.dim = embedding.len();
        }
        if embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: format!("embedding of `{sample_id}`"),
                expected: self.dim,
                found: embedding.len(),
            });
        }
        if let Some(bad) = embedding.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "embedding of `{sample_id}` has a non-finite entry at {bad}"
            )));
        }
        if self.index.contains_key(&sample_id) {
            return Err(Error::DuplicateId(sample_id));
        }
        self.index.insert(sample_id.clone(), self.ids.len());
        self.ids.push(sample_id);
        self.data.extend(embedding);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, sample_id: &str) -> Option<&[f64]> {
        self.index
            .get(sample_id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, sample_id: &str) -> Result<&[f64]> {
        self.get(sample_id)
            .ok_or_else(|| Error::MissingFeature(sample_id.to_string()))
    }

    /// Embedding converted to the learner's scalar type.
    pub fn vector<T: Scalar>(&self, sample_id: &str) -> Result<Vec<T>> {
        Ok(self
            .require(sample_id)?
            .iter()
            .map(|&v| T::lit(v))
            .collect())
    }

    pub fn read_from(reader: impl Read) -> Result<Self> {
        let mut store = FeatureStore::new(0);
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeatureRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("features line {}: {e}", i + 1)))?;
            store.insert(rec.sample_id, rec.embedding)?;
        }
        Ok(store)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for id in &self.ids {
            let rec = FeatureRecord {
                sample_id: id.clone(),
                embedding: self.get(id).unwrap().to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a newline-delimited `{sample_id, embedding}` file.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStore> {
    FeatureStore::read_from(File::open(path)?)
}

/// Learnable vector per (subtask type, model) pair, flattened in zoo order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    offsets: Vec<usize>,
    pub(crate) weights: Matrix<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(zoo: &ModelZoo, dim: usize) -> Self {
        Self {
            offsets: zoo.offsets().to_vec(),
            weights: Matrix::zeros(zoo.total_models(), dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_entries(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_types(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    pub fn row_index(&self, t: usize, j: usize) -> usize {
        self.offsets[t] + j
    }

    pub fn embedding(&self, t: usize, j: usize) -> &[T] {
        self.weights.row(self.row_index(t, j))
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix<T> {
        &mut self.weights
    }
}

/// `W1: d1 × d` for the input node and `W2: d2 × d` for model nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections<T> {
    pub w1: Matrix<T>,
    pub w2: Matrix<T>,
}

impl<T: Scalar> Projections<T> {
    pub fn zeros(d1: usize, d2: usize, d: usize) -> Self {
        Self {
            w1: Matrix::zeros(d1, d),
            w2: Matrix::zeros(d2, d),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w1.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    /// Input embedding width.
    pub input: usize,
    /// Model embedding width.
    pub model: usize,
    /// Shared feature width.
    pub shared: usize,
}

/// Draws `m` uniformly from `±1/sqrt(fan_in)`.
pub(crate) fn fill_uniform<T: Scalar>(rng: &mut ChaCha8Rng, m: &mut [T], fan_in: usize) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in m.iter_mut() {
        *v = T::lit(rng.random_range(-bound..=bound));
    }
}

/// Seeded fan-in initialization of the table and both projections.
pub fn init_parameters<T: Scalar>(
    zoo: &ModelZoo,
    dims: FeatureDims,
    seed: u64,
) -> (EmbeddingTable<T>, Projections<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with_rng(zoo, dims, &mut rng)
}

pub(crate) fn init_with_rng<T: Scalar>(
    zoo: &ModelZoo,
    dims: FeatureDims,
    rng: &mut ChaCha8Rng,
) -> (EmbeddingTable<T>, Projections<T>) {
    let mut table = EmbeddingTable::zeros(zoo, dims.model);
    let mut proj = Projections::zeros(dims.input, dims.model, dims.shared);
    fill_uniform(rng, table.weights.as_mut_slice(), dims.model);
    fill_uniform(rng, proj.w1.as_mut_slice(), dims.input);
    fill_uniform(rng, proj.w2.as_mut_slice(), dims.model);
    (table, proj)
}

/// Node-feature matrix `H` of shape `(L + 1) × d`: row 0 is `x W1`, row `k`
/// is the embedding of the model the choice assigns to node `k`'s type,
/// projected by `W2`.
pub fn assemble_graph<T: Scalar>(
    x: &[T],
    graph: &TaskGraph,
    choice: &Choice,
    table: &EmbeddingTable<T>,
    proj: &Projections<T>,
) -> Result<Matrix<T>> {
    if x.len() != proj.w1.rows() {
        return Err(Error::DimensionMismatch {
            context: "input embedding".into(),
            expected: proj.w1.rows(),
            found: x.len(),
        });
    }
    let d = proj.out_dim();
    let mut h = Matrix::zeros(graph.n_nodes(), d);
    proj.w1.left_mul_into(x, h.row_mut(0));
    for (k, &t) in graph.node_types.iter().enumerate() {
        let emb = table.embedding(t, choice.model_for(t));
        proj.w2.left_mul_into(emb, h.row_mut(k + 1));
    }
    Ok(h)
}

/// Looks the sample's features up and assembles `H`.
pub fn assemble<T: Scalar>(
    sample: &Sample,
    choice: &Choice,
    table: &EmbeddingTable<T>,
    proj: &Projections<T>,
    store: &FeatureStore,
) -> Result<Matrix<T>> {
    let x: Vec<T> = store.vector(&sample.feature_ref)?;
    assemble_graph(&x, &sample.graph, choice, table, proj)
}
