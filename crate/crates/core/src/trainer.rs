//! Splitting, missing-data simulation, the training loop and checkpoints.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::graph::{Choice, ChoiceSpace, Dataset, ModelZoo};
use crate::model::{ModelConfig, Scorer};
use crate::objective::LossKind;
use crate::optim::{Optimizer, OptimizerKind, StepLr};
use crate::scalar::Scalar;
use crate::selector::argmax_over;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_d: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub scheduler_step: usize,
    pub scheduler_gamma: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_d: 64,
            model_dim: 32,
            layers: 2,
            lr: 1e-3,
            weight_decay: 1e-4,
            optimizer: OptimizerKind::Adamw,
            batch_size: 64,
            scheduler_step: 100,
            scheduler_gamma: 0.7,
            max_epochs: 500,
            patience: 50,
            seed: 0,
            loss: LossKind::Cce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden_d == 0 || self.model_dim == 0 || self.layers == 0 {
            return bad("model sizes must be positive");
        }
        if self.batch_size == 0 || self.scheduler_step == 0 {
            return bad("batch_size and scheduler_step must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.scheduler_gamma > 0.0 && self.scheduler_gamma <= 1.0) {
            return bad("scheduler_gamma must lie in (0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            model_dim: self.model_dim,
            hidden: self.hidden_d,
            layers: self.layers,
        }
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base: self.lr,
            step: self.scheduler_step,
            gamma: self.scheduler_gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

/// Largest-remainder apportionment of `n` items; ties favour earlier parts.
pub fn split_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| r / total * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    let rem = |k: usize| quotas[k] - sizes[k] as f64;
    order.sort_by(|&a, &b| rem(b).partial_cmp(&rem(a)).unwrap().then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    sizes
}

/// Seeded sample-level split; each part keeps the dataset's row order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> (Dataset, Dataset, Dataset) {
    let sizes = split_sizes(dataset.len(), &spec.ratios);
    let mut perm: Vec<usize> = (0..dataset.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut parts = Vec::with_capacity(3);
    let mut start = 0;
    for s in sizes {
        let mut idx = perm[start..start + s].to_vec();
        idx.sort_unstable();
        parts.push(dataset.subset(&idx));
        start += s;
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    (parts.pop().unwrap(), val, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingMode {
    /// Hide individual observed (sample, choice) outcomes.
    Choices,
    /// Drop whole samples.
    Samples,
}

impl fmt::Display for MissingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingMode::Choices => "choices",
            MissingMode::Samples => "samples",
        })
    }
}

impl FromStr for MissingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "choices" => Ok(MissingMode::Choices),
            "samples" => Ok(MissingMode::Samples),
            _ => Err(Error::Config(format!("unknown missing mode `{s}`"))),
        }
    }
}

pub fn apply_missing(
    dataset: &Dataset,
    mode: MissingMode,
    ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "missing ratio {ratio} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        MissingMode::Choices => {
            let entries: Vec<(usize, usize)> = (0..dataset.len())
                .flat_map(|i| dataset.observed_choices(i).into_iter().map(move |j| (i, j)))
                .collect();
            let k = (ratio * entries.len() as f64).round() as usize;
            let mut out = dataset.clone();
            for pos in index::sample(&mut rng, entries.len(), k) {
                let (i, j) = entries[pos];
                out.observed_row_mut(i)[j] = false;
            }
            Ok(out)
        }
        MissingMode::Samples => {
            let n = dataset.len();
            let drop = (ratio * n as f64).round() as usize;
            let mut keep = index::sample(&mut rng, n, n - drop).into_vec();
            keep.sort_unstable();
            Ok(dataset.subset(&keep))
        }
    }
}

/// Shared inputs of training and validation.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub zoo: &'a ModelZoo,
    pub space: &'a ChoiceSpace,
    pub store: &'a FeatureStore,
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_ser: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub checkpoint: Checkpoint,
    /// Validation SER of the initialization.
    pub initial_val_ser: f64,
    pub history: Vec<EpochRecord>,
}

struct Prepared<T> {
    row: usize,
    x: Vec<T>,
    choices: Vec<usize>,
    labels: Vec<bool>,
}

fn prepare_rows<T: Scalar>(data: &Dataset, store: &FeatureStore) -> Result<Vec<Prepared<T>>> {
    (0..data.len())
        .map(|i| {
            let choices = data.observed_choices(i);
            let labels = choices
                .iter()
                .map(|&j| data.outcome(i, j) == Some(true))
                .collect();
            Ok(Prepared {
                row: i,
                x: store.vector(&data.sample(i).feature_ref)?,
                choices,
                labels,
            })
        })
        .collect()
}

/// Argmax SER over the full choice space; unobserved picks count as misses.
pub fn validation_ser<T: Scalar, M: Scorer<T>>(
    model: &M,
    data: &Dataset,
    ctx: &TrainContext<'_>,
) -> Result<f64> {
    validation_ser_with(model, data, ctx, &Workers::new(ctx.jobs)?)
}

fn validation_ser_with<T: Scalar, M: Scorer<T>>(
    model: &M,
    data: &Dataset,
    ctx: &TrainContext<'_>,
    workers: &Workers,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let cache = model.prepare();
    let all: Vec<&Choice> = ctx.space.choices().iter().collect();
    let idx: Vec<usize> = (0..all.len()).collect();
    let eval = |i: usize| -> Result<bool> {
        let s = data.sample(i);
        let x: Vec<T> = ctx.store.vector(&s.feature_ref)?;
        let logits = model.logits(&cache, &x, &s.graph, &all)?;
        Ok(argmax_over(&logits, &idx).and_then(|j| data.outcome(i, j)) == Some(true))
    };
    let hits: Vec<bool> = workers.map(data.len(), eval)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

/// Optional worker pool; results never depend on the worker count.
pub(crate) struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    pub(crate) fn new(jobs: usize) -> Result<Self> {
        if jobs <= 1 {
            return Ok(Self(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map(|p| Self(Some(p)))
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Maps `f` over `0..n`, preserving order.
    pub(crate) fn map<R: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<R> + Sync + Send,
    ) -> Result<Vec<R>> {
        match &self.0 {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

/// Trains a scorer from scratch and returns its best-validation state.
pub fn train<T: Scalar, M: Scorer<T>>(
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    ctx: &TrainContext<'_>,
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    let workers = Workers::new(ctx.jobs)?;
    let rows: Vec<Prepared<T>> = prepare_rows::<T>(train_set, ctx.store)?
        .into_iter()
        .filter(|r| !r.choices.is_empty())
        .collect();
    let mut model = M::init(
        ctx.zoo,
        ctx.store.dim(),
        &config.model_config(),
        config.seed,
    );
    let mut opt = Optimizer::<T>::new(config.optimizer, config.weight_decay);
    let sched = config.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));

    let initial_val_ser = validation_ser_with(&model, val_set, ctx, &workers)?;
    let mut best = (model.clone(), 0usize, initial_val_ser);
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..rows.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = sched.lr_at(epoch - 1);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let cache = model.prepare();
            let per_sample = workers.map(batch.len(), |k| {
                let r = &rows[batch[k]];
                let choices: Vec<&Choice> = r.choices.iter().map(|&j| ctx.space.get(j)).collect();
                let mut g = model.zeros_like();
                let l = model.loss_and_grad(
                    &cache,
                    &r.x,
                    &train_set.sample(r.row).graph,
                    &choices,
                    &r.labels,
                    config.loss,
                    &mut g,
                )?;
                Ok((l, g))
            })?;
            let mut grads = model.zeros_like();
            let mut loss = T::zero();
            for (l, g) in &per_sample {
                loss = loss + *l;
                grads.add_assign(g);
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {loss}, {} samples", batch.len()),
                });
            }
            epoch_loss += loss.as_f64();
            grads.scale(T::one() / T::lit(batch.len() as f64));
            opt.step(&mut model, &grads, T::lit(lr));
        }
        let train_loss = if rows.is_empty() {
            0.0
        } else {
            epoch_loss / rows.len() as f64
        };
        let val_ser = validation_ser_with(&model, val_set, ctx, &workers)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_ser,
        });
        if val_ser > best.2 {
            best = (model.clone(), epoch, val_ser);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (model, epoch, val_ser) = best;
    let checkpoint = Checkpoint::capture(&model, config, epoch, val_ser);
    Ok(TrainOutcome {
        model,
        checkpoint,
        initial_val_ser,
        history,
    })
}

/// Every learnable parameter plus what is needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub config: TrainConfig,
    pub input_dim: usize,
    pub epoch: usize,
    pub val_ser: f64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn capture<T: Scalar, M: Scorer<T>>(
        model: &M,
        config: &TrainConfig,
        epoch: usize,
        val_ser: f64,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: M::KIND.to_string(),
            config: config.clone(),
            input_dim: model.input_dim(),
            epoch,
            val_ser,
            params: model.flatten().into_iter().map(Scalar::as_f64).collect(),
        }
    }

    pub fn restore<T: Scalar, M: Scorer<T>>(&self, zoo: &ModelZoo) -> Result<M> {
        if self.kind != M::KIND {
            return Err(Error::format(format!(
                "checkpoint holds a `{}` model, expected `{}`",
                self.kind,
                M::KIND
            )));
        }
        let mut model = M::init(zoo, self.input_dim, &self.config.model_config(), 0);
        let values: Vec<T> = self.params.iter().map(|&v| T::lit(v)).collect();
        if !model.assign_flat(&values) {
            return Err(Error::format(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.n_params()
            )));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::format("checkpoint has no version field"))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                found: version.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// `epoch,lr,train_loss,val_ser` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_ser\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.val_ser
        ));
    }
    out
}
