//! Task graphs, the model zoo, the joint choice space and recorded outcomes.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the virtual input node in every augmented graph.
pub const VIRTUAL_NODE: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubtaskKind {
    ModelBacked,
    /// Plain code with nothing to select; carried as a single pseudo-model.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskType {
    pub id: usize,
    pub name: String,
    pub kind: SubtaskKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: usize,
    pub subtask_type: usize,
    pub name: String,
    /// Release date as days since the Unix epoch.
    pub release_ordinal: i64,
    pub param_count: u64,
    /// Mean wall-clock seconds per execution.
    pub avg_exec_time: f64,
}

/// Candidate models per subtask type.
///
/// Type ids are positions in `types`; model ids are positions within their
/// type's list. Both orderings are fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelZoo {
    types: Vec<SubtaskType>,
    models: Vec<Vec<ModelInfo>>,
    offsets: Vec<usize>,
}

impl ModelZoo {
    pub fn new(entries: Vec<(SubtaskType, Vec<ModelInfo>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("model zoo has no subtask types".into()));
        }
        let mut names = BTreeSet::new();
        let mut types = Vec::with_capacity(entries.len());
        let mut models = Vec::with_capacity(entries.len());
        for (pos, (ty, list)) in entries.into_iter().enumerate() {
            if ty.id != pos {
                return Err(Error::Config(format!(
                    "subtask type `{}` has id {} but sits at position {pos}",
                    ty.name, ty.id
                )));
            }
            if !names.insert(ty.name.clone()) {
                return Err(Error::DuplicateId(ty.name));
            }
            if list.is_empty() {
                return Err(Error::Config(format!(
                    "subtask type `{}` has no models",
                    ty.name
                )));
            }
            if ty.kind == SubtaskKind::Deterministic && list.len() != 1 {
                return Err(Error::Config(format!(
                    "deterministic type `{}` must hold exactly one pseudo-model",
                    ty.name
                )));
            }
            for (j, m) in list.iter().enumerate() {
                if m.id != j || m.subtask_type != pos {
                    return Err(Error::Config(format!(
                        "model `{}` has inconsistent ids (type {}, id {})",
                        m.name, m.subtask_type, m.id
                    )));
                }
                if m.avg_exec_time < 0.0 || !m.avg_exec_time.is_finite() {
                    return Err(Error::Config(format!(
                        "model `{}` has invalid execution time {}",
                        m.name, m.avg_exec_time
                    )));
                }
            }
            types.push(ty);
            models.push(list);
        }
        let mut offsets = Vec::with_capacity(models.len());
        let mut acc = 0;
        for list in &models {
            offsets.push(acc);
            acc += list.len();
        }
        Ok(Self {
            types,
            models,
            offsets,
        })
    }

    /// Shorthand for tests and fixtures: `(name, n_models)` pairs, where a
    /// count of one marks a deterministic type.
    pub fn from_counts(counts: &[(&str, usize)]) -> Result<Self> {
        let entries = counts
            .iter()
            .enumerate()
            .map(|(t, &(name, n))| {
                let kind = if n == 1 {
                    SubtaskKind::Deterministic
                } else {
                    SubtaskKind::ModelBacked
                };
                let models = (0..n)
                    .map(|j| ModelInfo {
                        id: j,
                        subtask_type: t,
                        name: format!("{}-{j}", name.to_lowercase()),
                        release_ordinal: 0,
                        param_count: 0,
                        avg_exec_time: 0.0,
                    })
                    .collect();
                (
                    SubtaskType {
                        id: t,
                        name: name.to_string(),
                        kind,
                    },
                    models,
                )
            })
            .collect();
        Self::new(entries)
    }

    #[inline]
    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    #[inline]
    pub fn n_models(&self, t: usize) -> usize {
        self.models[t].len()
    }

    pub fn total_models(&self) -> usize {
        self.models.iter().map(Vec::len).sum()
    }

    pub fn types(&self) -> &[SubtaskType] {
        &self.types
    }

    pub fn subtask_type(&self, t: usize) -> &SubtaskType {
        &self.types[t]
    }

    pub fn models(&self, t: usize) -> &[ModelInfo] {
        &self.models[t]
    }

    pub fn model(&self, t: usize, j: usize) -> &ModelInfo {
        &self.models[t][j]
    }

    /// Row of `(t, j)` in a flat per-model table.
    #[inline]
    pub fn flat_index(&self, t: usize, j: usize) -> usize {
        self.offsets[t] + j
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn type_by_name(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.models.iter().map(Vec::len).collect()
    }
}

/// Dependency DAG of one decomposed input.
///
/// Subtask nodes are numbered `1..=L` in program order; node 0 is the virtual
/// input node. `node_types[k - 1]` is the subtask type of node `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub sample_id: String,
    pub node_types: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl TaskGraph {
    pub fn new(
        sample_id: impl Into<String>,
        node_types: Vec<usize>,
        edges: Vec<(usize, usize)>,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            node_types,
            edges,
        }
    }

    /// Subtask count `L` (the virtual node excluded).
    #[inline]
    pub fn n_subtasks(&self) -> usize {
        self.node_types.len()
    }

    /// `L + 1`.
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.node_types.len() + 1
    }

    pub fn node_type(&self, node: usize) -> Option<usize> {
        node.checked_sub(1)
            .and_then(|k| self.node_types.get(k).copied())
    }

    /// Distinct subtask types present in the graph, ascending.
    pub fn present_types(&self) -> BTreeSet<usize> {
        self.node_types.iter().copied().collect()
    }

    fn check_edges(&self) -> Result<()> {
        let n = self.n_nodes();
        for &(u, v) in &self.edges {
            if u >= n || v >= n {
                return Err(Error::DanglingEdge {
                    from: u,
                    to: v,
                    n_nodes: n,
                });
            }
        }
        Ok(())
    }

    /// Topological order with ties broken by lowest node index.
    ///
    /// Node 0 always comes first since it may not have incoming edges.
    pub fn validate_and_topo_sort(&self) -> Result<Vec<usize>> {
        self.check_edges()?;
        let n = self.n_nodes();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(u, v) in &self.edges {
            if u == v {
                return Err(Error::Cycle { from: u, to: v });
            }
            indeg[v] += 1;
            succ[u].push(v);
        }
        if indeg[VIRTUAL_NODE] > 0 {
            if let Some(&(u, v)) = self.edges.iter().find(|&&(_, v)| v == VIRTUAL_NODE) {
                // An edge into node 0 either closes a cycle or is simply illegal.
                let order = self.kahn(&indeg, &succ);
                if order.len() < n {
                    let (a, b) = self.cycle_edge(&order, &succ);
                    return Err(Error::Cycle { from: a, to: b });
                }
                return Err(Error::InvalidGraph(format!(
                    "edge {u} -> {v} enters the virtual input node"
                )));
            }
        }
        let order = self.kahn(&indeg, &succ);
        if order.len() < n {
            let (a, b) = self.cycle_edge(&order, &succ);
            return Err(Error::Cycle { from: a, to: b });
        }
        Ok(order)
    }

    fn kahn(&self, indeg: &[usize], succ: &[Vec<usize>]) -> Vec<usize> {
        let mut indeg = indeg.to_vec();
        let mut ready: BinaryHeap<Reverse<usize>> = indeg
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| Reverse(i))
            .collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(Reverse(u)) = ready.pop() {
            order.push(u);
            for &v in &succ[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(Reverse(v));
                }
            }
        }
        order
    }

    /// Some edge lying on a cycle among the nodes Kahn's algorithm left over.
    fn cycle_edge(&self, done: &[usize], succ: &[Vec<usize>]) -> (usize, usize) {
        let n = self.n_nodes();
        let mut left = vec![true; n];
        for &u in done {
            left[u] = false;
        }
        // Every leftover node has a leftover successor, so walking forward
        // must revisit a node.
        let start = (0..n).find(|&u| left[u]).expect("leftover node");
        let mut seen = vec![usize::MAX; n];
        let mut path = Vec::new();
        let mut u = start;
        loop {
            if seen[u] != usize::MAX {
                let cyc = &path[seen[u]..];
                let a = cyc[0];
                let b = if cyc.len() > 1 { cyc[1] } else { cyc[0] };
                return (a, b);
            }
            seen[u] = path.len();
            path.push(u);
            u = *succ[u]
                .iter()
                .find(|&&v| left[v])
                .expect("leftover nodes keep a leftover successor");
        }
    }

    /// Wires node 0 to every subtask node that has no incoming edge.
    ///
    /// Idempotent: nodes already fed by node 0 are not roots any more.
    pub fn augment_virtual_node(&self) -> TaskGraph {
        let n = self.n_nodes();
        let mut has_in = vec![false; n];
        for &(_, v) in &self.edges {
            if v < n {
                has_in[v] = true;
            }
        }
        let mut edges = self.edges.clone();
        for v in 1..n {
            if !has_in[v] {
                edges.push((VIRTUAL_NODE, v));
            }
        }
        TaskGraph {
            sample_id: self.sample_id.clone(),
            node_types: self.node_types.clone(),
            edges,
        }
    }
}

/// One joint assignment: `assignment[t]` is the model index for type `t`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Choice {
    pub assignment: Vec<usize>,
}

impl Choice {
    pub fn new(assignment: Vec<usize>) -> Self {
        Self { assignment }
    }

    #[inline]
    pub fn model_for(&self, t: usize) -> usize {
        self.assignment[t]
    }

    pub fn validate(&self, zoo: &ModelZoo) -> Result<()> {
        if self.assignment.len() != zoo.n_types() {
            return Err(Error::InvalidChoice(format!(
                "assignment covers {} types, zoo has {}",
                self.assignment.len(),
                zoo.n_types()
            )));
        }
        for (t, &j) in self.assignment.iter().enumerate() {
            if j >= zoo.n_models(t) {
                return Err(Error::InvalidChoice(format!(
                    "model index {j} out of range for `{}` ({} models)",
                    zoo.subtask_type(t).name,
                    zoo.n_models(t)
                )));
            }
        }
        Ok(())
    }
}

/// Every joint assignment in lexicographic order: type 0 is the most
/// significant digit, the last type varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceSpace {
    radices: Vec<usize>,
    choices: Vec<Choice>,
}

impl ChoiceSpace {
    pub fn enumerate(zoo: &ModelZoo) -> Self {
        let radices = zoo.counts();
        let size: usize = radices.iter().product();
        let mut choices = Vec::with_capacity(size);
        let mut digits = vec![0usize; radices.len()];
        for _ in 0..size {
            choices.push(Choice::new(digits.clone()));
            for t in (0..radices.len()).rev() {
                digits[t] += 1;
                if digits[t] < radices[t] {
                    break;
                }
                digits[t] = 0;
            }
        }
        Self { radices, choices }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    #[inline]
    pub fn get(&self, index: usize) -> &Choice {
        &self.choices[index]
    }

    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn index_of(&self, choice: &Choice) -> Option<usize> {
        if choice.assignment.len() != self.radices.len() {
            return None;
        }
        let mut idx = 0;
        for (&j, &r) in choice.assignment.iter().zip(&self.radices) {
            if j >= r {
                return None;
            }
            idx = idx * r + j;
        }
        Some(idx)
    }

    /// Indices of choices whose every model passes `allowed[t][j]`.
    pub fn restricted(&self, allowed: &[Vec<bool>]) -> Vec<usize> {
        self.choices
            .iter()
            .enumerate()
            .filter(|(_, c)| c.assignment.iter().enumerate().all(|(t, &j)| allowed[t][j]))
            .map(|(i, _)| i)
            .collect()
    }
}

/// `enumerate_choices` under its operational name.
pub fn enumerate_choices(zoo: &ModelZoo) -> ChoiceSpace {
    ChoiceSpace::enumerate(zoo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Query,
    Choose,
    Compare,
    Verify,
    Logical,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Query,
        Category::Choose,
        Category::Compare,
        Category::Verify,
        Category::Logical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Query => "Query",
            Category::Choose => "Choose",
            Category::Compare => "Compare",
            Category::Verify => "Verify",
            Category::Logical => "Logical",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::format(format!("unknown category `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionRecord {
    pub sample_id: String,
    pub choice_index: usize,
    pub status: bool,
    pub exec_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub category: Category,
    /// Augmented task graph.
    pub graph: TaskGraph,
    pub feature_ref: String,
    /// Program text the graph was parsed from.
    pub program: String,
}

/// Samples plus an `N × |C|` outcome matrix and its observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_choices: usize,
    outcomes: Vec<bool>,
    observed: Vec<bool>,
    times: Vec<Option<f64>>,
}

impl Dataset {
    pub fn empty(n_choices: usize) -> Self {
        Self {
            samples: Vec::new(),
            n_choices,
            outcomes: Vec::new(),
            observed: Vec::new(),
            times: Vec::new(),
        }
    }

    /// Builds a dataset from per-sample execution records. Entries without a
    /// record stay unobserved.
    pub fn from_records(
        samples: Vec<Sample>,
        n_choices: usize,
        records: &[ExecutionRecord],
    ) -> Result<Self> {
        let mut ds = Self::empty(n_choices);
        let mut row_of = HashMap::with_capacity(samples.len());
        for s in samples {
            if row_of
                .insert(s.sample_id.clone(), ds.samples.len())
                .is_some()
            {
                return Err(Error::DuplicateId(s.sample_id));
            }
            ds.push_row(
                s,
                vec![false; n_choices],
                vec![false; n_choices],
                vec![None; n_choices],
            );
        }
        for r in records {
            let &i = row_of.get(&r.sample_id).ok_or_else(|| {
                Error::Join(format!("record for unknown sample `{}`", r.sample_id))
            })?;
            if r.choice_index >= n_choices {
                return Err(Error::format(format!(
                    "choice index {} out of range for `{}`",
                    r.choice_index, r.sample_id
                )));
            }
            let k = i * n_choices + r.choice_index;
            ds.outcomes[k] = r.status;
            ds.observed[k] = true;
            ds.times[k] = r.exec_time;
        }
        Ok(ds)
    }

    pub(crate) fn push_row(
        &mut self,
        sample: Sample,
        outcomes: Vec<bool>,
        observed: Vec<bool>,
        times: Vec<Option<f64>>,
    ) {
        debug_assert_eq!(outcomes.len(), self.n_choices);
        self.samples.push(sample);
        self.outcomes.extend(outcomes);
        self.observed.extend(observed);
        self.times.extend(times);
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn n_choices(&self) -> usize {
        self.n_choices
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.sample_id == sample_id)
    }

    /// Outcome of choice `j` on sample `i`; `None` when unobserved.
    #[inline]
    pub fn outcome(&self, i: usize, j: usize) -> Option<bool> {
        let k = i * self.n_choices + j;
        self.observed[k].then(|| self.outcomes[k])
    }

    pub fn exec_time(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_choices + j;
        if self.observed[k] {
            self.times[k]
        } else {
            None
        }
    }

    pub fn outcome_row(&self, i: usize) -> &[bool] {
        &self.outcomes[i * self.n_choices..(i + 1) * self.n_choices]
    }

    pub fn observed_row(&self, i: usize) -> &[bool] {
        &self.observed[i * self.n_choices..(i + 1) * self.n_choices]
    }

    pub(crate) fn observed_row_mut(&mut self, i: usize) -> &mut [bool] {
        let n = self.n_choices;
        &mut self.observed[i * n..(i + 1) * n]
    }

    pub fn observed_choices(&self, i: usize) -> Vec<usize> {
        self.observed_row(i)
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn n_observed(&self, i: usize) -> usize {
        self.observed_row(i).iter().filter(|&&o| o).count()
    }

    /// `(successes, observed)` over the sample's observed entries.
    pub fn success_counts(&self, i: usize) -> (usize, usize) {
        let mut succ = 0;
        let mut obs = 0;
        for (&o, &p) in self.observed_row(i).iter().zip(self.outcome_row(i)) {
            if o {
                obs += 1;
                succ += p as usize;
            }
        }
        (succ, obs)
    }

    /// Mean observed status of sample `i`.
    pub fn executable_ratio(&self, i: usize) -> Result<f64> {
        let (succ, obs) = self.success_counts(i);
        if obs == 0 {
            return Err(Error::NoObservation(self.samples[i].sample_id.clone()));
        }
        Ok(succ as f64 / obs as f64)
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.n_choices);
        let n = self.n_choices;
        for &i in indices {
            out.push_row(
                self.samples[i].clone(),
                self.outcomes[i * n..(i + 1) * n].to_vec(),
                self.observed[i * n..(i + 1) * n].to_vec(),
                self.times[i * n..(i + 1) * n].to_vec(),
            );
        }
        out
    }

    /// Drops samples whose observed outcomes are all successes or all
    /// failures; such samples cannot tell selectors apart.
    pub fn filter_degenerate(&self) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let (succ, obs) = self.success_counts(i);
                succ > 0 && succ < obs
            })
            .collect();
        self.subset(&keep)
    }

    pub fn records(&self) -> impl Iterator<Item = ExecutionRecord> + '_ {
        (0..self.len()).flat_map(move |i| {
            (0..self.n_choices).filter_map(move |j| {
                self.outcome(i, j).map(|status| ExecutionRecord {
                    sample_id: self.samples[i].sample_id.clone(),
                    choice_index: j,
                    status,
                    exec_time: self.exec_time(i, j),
                })
            })
        })
    }
}

/// Free-function form of [`Dataset::executable_ratio`].
pub fn executable_ratio(dataset: &Dataset, sample_index: usize) -> Result<f64> {
    dataset.executable_ratio(sample_index)
}

/// Free-function form of [`Dataset::filter_degenerate`].
pub fn filter_degenerate(dataset: &Dataset) -> Dataset {
    dataset.filter_degenerate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str) -> Sample {
        Sample {
            sample_id: id.into(),
            category: Category::Query,
            graph: TaskGraph::new(id, vec![0], vec![(0, 1)]),
            feature_ref: id.into(),
            program: String::new(),
        }
    }

    fn dataset(rows: &[&[Option<bool>]]) -> Dataset {
        let n = rows[0].len();
        let mut ds = Dataset::empty(n);
        for (i, row) in rows.iter().enumerate() {
            ds.push_row(
                sample(&format!("s{i}")),
                row.iter().map(|o| o.unwrap_or(false)).collect(),
                row.iter().map(Option::is_some).collect(),
                vec![None; n],
            );
        }
        ds
    }

    #[test]
    fn msgqa_sized_space_has_seventy_choices() {
        let zoo = ModelZoo::from_counts(&[("LOC", 10), ("VQA", 7)]).unwrap();
        assert_eq!(enumerate_choices(&zoo).len(), 70);
    }

    #[test]
    fn lexicographic_order_starts_at_zero() {
        let zoo = ModelZoo::from_counts(&[("A", 2), ("B", 3)]).unwrap();
        let space = enumerate_choices(&zoo);
        assert_eq!(space.len(), 6);
        assert_eq!(space.get(0).assignment, vec![0, 0]);
        assert_eq!(space.get(1).assignment, vec![0, 1]);
        assert_eq!(space.get(3).assignment, vec![1, 0]);
        for (i, c) in space.choices().iter().enumerate() {
            assert_eq!(space.index_of(c), Some(i));
        }
    }

    #[test]
    fn single_type_single_model() {
        let zoo = ModelZoo::from_counts(&[("EVAL", 1)]).unwrap();
        assert_eq!(enumerate_choices(&zoo).len(), 1);
    }

    #[test]
    fn zoo_rejects_duplicate_names_and_empty_types() {
        assert!(ModelZoo::from_counts(&[("A", 2), ("A", 3)]).is_err());
        assert!(ModelZoo::from_counts(&[("A", 0)]).is_err());
    }

    #[test]
    fn topo_sort_chain_and_diamond() {
        let g = TaskGraph::new("g", vec![0, 0], vec![(0, 1), (1, 2)]);
        assert_eq!(g.validate_and_topo_sort().unwrap(), vec![0, 1, 2]);
        let g = TaskGraph::new("g", vec![0, 0, 0], vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(g.validate_and_topo_sort().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn topo_sort_detects_two_cycle() {
        let g = TaskGraph::new("g", vec![0, 0], vec![(1, 2), (2, 1)]);
        match g.validate_and_topo_sort() {
            Err(Error::Cycle { from, to }) => {
                assert!(g.edges.contains(&(from, to)));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn topo_sort_rejects_dangling_and_virtual_input() {
        let g = TaskGraph::new("g", vec![0], vec![(0, 5)]);
        assert!(matches!(
            g.validate_and_topo_sort(),
            Err(Error::DanglingEdge { .. })
        ));
        let g = TaskGraph::new("g", vec![0], vec![(1, 0)]);
        assert!(matches!(
            g.validate_and_topo_sort(),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn augment_wires_roots_only() {
        let g = TaskGraph::new("g", vec![0, 0, 0], vec![(1, 2)]);
        let a = g.augment_virtual_node();
        assert!(a.edges.contains(&(0, 1)));
        assert!(a.edges.contains(&(0, 3)));
        assert!(!a.edges.contains(&(0, 2)));
        assert_eq!(a.augment_virtual_node(), a);

        let single = TaskGraph::new("g", vec![0], vec![]).augment_virtual_node();
        assert_eq!(single.edges, vec![(0, 1)]);
    }

    #[test]
    fn executable_ratio_respects_mask() {
        let t = Some(true);
        let f = Some(false);
        let ds = dataset(&[
            &[t, t, f, f],
            &[t, t, t, None],
            &[t, None, f, None],
            &[None, None, None, None],
        ]);
        assert_eq!(ds.executable_ratio(0).unwrap(), 0.5);
        assert_eq!(ds.executable_ratio(1).unwrap(), 1.0);
        assert_eq!(ds.executable_ratio(2).unwrap(), 0.5);
        assert!(matches!(
            ds.executable_ratio(3),
            Err(Error::NoObservation(_))
        ));
    }

    #[test]
    fn filter_degenerate_drops_uniform_rows() {
        let t = Some(true);
        let f = Some(false);
        let all_true = vec![t; 70];
        let mut mixed = vec![f; 70];
        mixed[0] = t;
        let all_false = vec![f; 70];
        let ds = dataset(&[&all_true, &mixed, &all_false]);
        let kept = ds.filter_degenerate();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.sample(0).sample_id, "s1");
        assert!(Dataset::empty(3).filter_degenerate().is_empty());
    }

    fn arb_dag() -> impl Strategy<Value = TaskGraph> {
        (1usize..7)
            .prop_flat_map(|l| {
                let pairs: Vec<(usize, usize)> = (1..=l)
                    .flat_map(|u| (u + 1..=l).map(move |v| (u, v)))
                    .collect();
                let n = pairs.len();
                (
                    Just(l),
                    Just(pairs),
                    proptest::collection::vec(any::<bool>(), n),
                    proptest::collection::vec(0usize..3, l),
                )
            })
            .prop_map(|(_, pairs, keep, types)| {
                let edges = pairs
                    .into_iter()
                    .zip(keep)
                    .filter(|(_, k)| *k)
                    .map(|(e, _)| e)
                    .collect();
                TaskGraph::new("p", types, edges)
            })
    }

    proptest! {
        #[test]
        fn choice_space_size_is_product(counts in proptest::collection::vec(1usize..=6, 1..=4)) {
            let named: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, &n)| (format!("T{i}"), n)).collect();
            let refs: Vec<(&str, usize)> = named.iter().map(|(s, n)| (s.as_str(), *n)).collect();
            let zoo = ModelZoo::from_counts(&refs).unwrap();
            let space = enumerate_choices(&zoo);
            prop_assert_eq!(space.len(), counts.iter().product::<usize>());
            let uniq: BTreeSet<_> = space.choices().iter().cloned().collect();
            prop_assert_eq!(uniq.len(), space.len());
        }

        #[test]
        fn topo_order_respects_edges(g in arb_dag()) {
            let g = g.augment_virtual_node();
            let order = g.validate_and_topo_sort().unwrap();
            prop_assert_eq!(order[0], 0);
            let mut pos = vec![0; g.n_nodes()];
            for (i, &u) in order.iter().enumerate() { pos[u] = i; }
            for &(u, v) in &g.edges { prop_assert!(pos[u] < pos[v]); }
        }

        #[test]
        fn augmentation_is_idempotent(g in arb_dag()) {
            let once = g.augment_virtual_node();
            prop_assert_eq!(once.augment_virtual_node(), once);
        }

        #[test]
        fn filter_keeps_mixed_rows(rows in proptest::collection::vec(proptest::collection::vec(proptest::option::of(any::<bool>()), 5), 1..20)) {
            let refs: Vec<&[Option<bool>]> = rows.iter().map(|r| r.as_slice()).collect();
            let ds = dataset(&refs);
            let kept = ds.filter_degenerate();
            for (i, row) in rows.iter().enumerate() {
                let obs: Vec<bool> = row.iter().flatten().copied().collect();
                let mixed = obs.iter().any(|&b| b) && obs.iter().any(|&b| !b);
                let id = format!("s{i}");
                prop_assert_eq!(kept.position(&id).is_some(), mixed);
            }
        }
    }
}
