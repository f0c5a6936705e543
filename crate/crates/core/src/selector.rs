//! Test-time selection over the choice space.

use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::graph::{Choice, ChoiceSpace, ModelZoo, Sample, TaskGraph};
use crate::model::Scorer;
use crate::scalar::Scalar;

/// Choices a selector may return for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    /// `allowed[t][j]`: model `j` of type `t` survives the filter.
    pub allowed: Vec<Vec<bool>>,
    /// Surviving choice indices, ascending.
    pub indices: Vec<usize>,
}

impl Candidates {
    pub fn all(zoo: &ModelZoo, space: &ChoiceSpace) -> Self {
        Self {
            allowed: zoo.counts().into_iter().map(|n| vec![true; n]).collect(),
            indices: (0..space.len()).collect(),
        }
    }

    /// Drops every model whose mean execution time exceeds `budget`.
    ///
    /// A type that occurs in `graph` must keep at least one model. Types the
    /// graph never runs keep their full list when nothing fits, since their
    /// model never executes.
    pub fn for_budget(
        zoo: &ModelZoo,
        space: &ChoiceSpace,
        graph: &TaskGraph,
        budget: Option<f64>,
    ) -> Result<Self> {
        let Some(budget) = budget else {
            return Ok(Self::all(zoo, space));
        };
        let present = graph.present_types();
        let mut allowed = Vec::with_capacity(zoo.n_types());
        for t in 0..zoo.n_types() {
            let fits: Vec<bool> = zoo
                .models(t)
                .iter()
                .map(|m| m.avg_exec_time <= budget)
                .collect();
            if fits.iter().any(|&f| f) {
                allowed.push(fits);
            } else if present.contains(&t) {
                return Err(Error::InfeasibleBudget {
                    type_name: zoo.subtask_type(t).name.clone(),
                    budget,
                });
            } else {
                allowed.push(vec![true; fits.len()]);
            }
        }
        let indices = space.restricted(&allowed);
        Ok(Self { allowed, indices })
    }

    pub fn contains(&self, choice: &Choice) -> bool {
        choice
            .assignment
            .iter()
            .enumerate()
            .all(|(t, &j)| self.allowed[t][j])
    }
}

/// Anything that maps a sample to one choice index.
pub trait Selector: Sync {
    fn name(&self) -> &str;

    /// Picks one of `candidates.indices`, which is never empty.
    fn select(&self, sample: &Sample, candidates: &Candidates) -> Result<usize>;
}

/// Position of the largest value among `indices`; ties go to the earliest.
pub fn argmax_over<T: Scalar>(scores: &[T], indices: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for &i in indices {
        let s = scores[i];
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// One logit per choice, in choice-space order.
pub fn score_all<T: Scalar, M: Scorer<T>>(
    model: &M,
    cache: &M::Cache,
    sample: &Sample,
    store: &FeatureStore,
    space: &ChoiceSpace,
) -> Result<Vec<T>> {
    let x: Vec<T> = store.vector(&sample.feature_ref)?;
    let refs: Vec<&Choice> = space.choices().iter().collect();
    model.logits(cache, &x, &sample.graph, &refs)
}

/// Highest-scoring choice, optionally restricted by a time budget.
pub fn select<T: Scalar, M: Scorer<T>>(
    model: &M,
    sample: &Sample,
    store: &FeatureStore,
    zoo: &ModelZoo,
    space: &ChoiceSpace,
    budget: Option<f64>,
) -> Result<(usize, T)> {
    let candidates = Candidates::for_budget(zoo, space, &sample.graph, budget)?;
    let scores = score_all(model, &model.prepare(), sample, store, space)?;
    let i = argmax_over(&scores, &candidates.indices)
        .ok_or_else(|| Error::Shape("no finite score among candidates".into()))?;
    Ok((i, scores[i]))
}

/// Up to `k` choices by descending logit; equal logits keep index order.
pub fn rank_topk<T: Scalar, M: Scorer<T>>(
    model: &M,
    sample: &Sample,
    store: &FeatureStore,
    space: &ChoiceSpace,
    k: usize,
) -> Result<Vec<(usize, T)>> {
    let scores = score_all(model, &model.prepare(), sample, store, space)?;
    Ok(top_k(&scores, k))
}

pub fn top_k<T: Scalar>(scores: &[T], k: usize) -> Vec<(usize, T)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

/// A trained scorer bound to its feature store.
pub struct ModelSelector<'a, T: Scalar, M: Scorer<T>> {
    name: String,
    model: &'a M,
    cache: M::Cache,
    store: &'a FeatureStore,
    space: &'a ChoiceSpace,
}

impl<'a, T: Scalar, M: Scorer<T>> ModelSelector<'a, T, M> {
    pub fn new(
        name: impl Into<String>,
        model: &'a M,
        store: &'a FeatureStore,
        space: &'a ChoiceSpace,
    ) -> Self {
        Self {
            name: name.into(),
            cache: model.prepare(),
            model,
            store,
            space,
        }
    }

    pub fn scores(&self, sample: &Sample, indices: &[usize]) -> Result<Vec<T>> {
        let x: Vec<T> = self.store.vector(&sample.feature_ref)?;
        let refs: Vec<&Choice> = indices.iter().map(|&i| self.space.get(i)).collect();
        self.model.logits(&self.cache, &x, &sample.graph, &refs)
    }
}

impl<T: Scalar, M: Scorer<T>> Selector for ModelSelector<'_, T, M> {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&self, sample: &Sample, candidates: &Candidates) -> Result<usize> {
        let scores = self.scores(sample, &candidates.indices)?;
        let positions: Vec<usize> = (0..scores.len()).collect();
        argmax_over(&scores, &positions)
            .map(|p| candidates.indices[p])
            .ok_or_else(|| Error::Shape(format!("no finite score for `{}`", sample.sample_id)))
    }
}
