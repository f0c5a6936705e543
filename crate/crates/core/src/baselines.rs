//! Reference selectors: training-free rules, the best-on-average choice,
//! an edge-blind collaborative-filtering scorer, and the outcome oracle.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{fill_uniform, EmbeddingTable};
use crate::graph::{Choice, ChoiceSpace, Dataset, ModelZoo, Sample, TaskGraph};
use crate::linalg::{axpy, dot, Matrix};
use crate::model::{ModelConfig, Scorer};
use crate::objective::{ChoiceBatch, LossKind};
use crate::params::Parameters;
use crate::scalar::Scalar;
use crate::selector::{Candidates, Selector};

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        fnv1a(sample_id.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15),
    )
}

/// Independent uniform model per type, fixed by `(seed, sample_id)`.
pub fn random_select(zoo: &ModelZoo, seed: u64, sample_id: &str) -> Choice {
    let allowed: Vec<Vec<bool>> = zoo.counts().into_iter().map(|n| vec![true; n]).collect();
    random_among(&allowed, seed, sample_id)
}

fn random_among(allowed: &[Vec<bool>], seed: u64, sample_id: &str) -> Choice {
    let mut rng = sample_rng(seed, sample_id);
    Choice::new(
        allowed
            .iter()
            .map(|row| {
                let ok: Vec<usize> = (0..row.len()).filter(|&j| row[j]).collect();
                ok[rng.random_range(0..ok.len())]
            })
            .collect(),
    )
}

/// Validates a configured constant choice.
pub fn fixed_select(zoo: &ModelZoo, choice: &Choice) -> Result<Choice> {
    choice.validate(zoo)?;
    Ok(choice.clone())
}

/// Per type: latest release, then most parameters, then lowest id.
pub fn external_metric_select(zoo: &ModelZoo) -> Choice {
    let allowed: Vec<Vec<bool>> = zoo.counts().into_iter().map(|n| vec![true; n]).collect();
    metric_among(zoo, &allowed)
}

fn metric_among(zoo: &ModelZoo, allowed: &[Vec<bool>]) -> Choice {
    Choice::new(
        (0..zoo.n_types())
            .map(|t| {
                let mut best: Option<usize> = None;
                for (j, m) in zoo.models(t).iter().enumerate() {
                    if !allowed[t][j] {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some(b) => {
                            let cur = zoo.model(t, b);
                            (m.release_ordinal, m.param_count)
                                > (cur.release_ordinal, cur.param_count)
                        }
                    };
                    if better {
                        best = Some(j);
                    }
                }
                best.expect("every type keeps at least one model")
            })
            .collect(),
    )
}

/// Mean observed success of every choice over a training set; `None` for
/// choices never observed.
pub fn choice_means(train: &Dataset) -> Vec<Option<f64>> {
    let n = train.n_choices();
    let mut succ = vec![0usize; n];
    let mut obs = vec![0usize; n];
    for i in 0..train.len() {
        for j in 0..n {
            if let Some(p) = train.outcome(i, j) {
                obs[j] += 1;
                succ[j] += p as usize;
            }
        }
    }
    (0..n)
        .map(|j| (obs[j] > 0).then(|| succ[j] as f64 / obs[j] as f64))
        .collect()
}

fn best_mean(means: &[Option<f64>], indices: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in indices {
        if let Some(m) = means[j] {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((j, m));
            }
        }
    }
    best.map(|(j, _)| j)
}

/// The single choice with the highest mean training success.
pub fn global_best_select(train: &Dataset) -> Result<usize> {
    best_mean(&choice_means(train), 0..train.n_choices()).ok_or(Error::NoData)
}

pub struct RandomSelector<'a> {
    pub space: &'a ChoiceSpace,
    pub seed: u64,
}

impl Selector for RandomSelector<'_> {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&self, sample: &Sample, candidates: &Candidates) -> Result<usize> {
        let c = random_among(&candidates.allowed, self.seed, &sample.sample_id);
        self.space
            .index_of(&c)
            .ok_or_else(|| Error::InvalidChoice(format!("{c:?}")))
    }
}

/// A constant choice. Under a budget, each over-budget model is replaced by
/// the first surviving model of its type.
pub struct FixedSelector<'a> {
    pub space: &'a ChoiceSpace,
    pub choice: Choice,
}

impl<'a> FixedSelector<'a> {
    pub fn new(zoo: &ModelZoo, space: &'a ChoiceSpace, choice: Choice) -> Result<Self> {
        Ok(Self {
            space,
            choice: fixed_select(zoo, &choice)?,
        })
    }
}

impl Selector for FixedSelector<'_> {
    fn name(&self) -> &str {
        "visprog"
    }

    fn select(&self, _sample: &Sample, candidates: &Candidates) -> Result<usize> {
        let c = Choice::new(
            self.choice
                .assignment
                .iter()
                .enumerate()
                .map(|(t, &j)| {
                    if candidates.allowed[t][j] {
                        j
                    } else {
                        candidates.allowed[t].iter().position(|&a| a).unwrap_or(j)
                    }
                })
                .collect(),
        );
        self.space
            .index_of(&c)
            .ok_or_else(|| Error::InvalidChoice(format!("{c:?}")))
    }
}

pub struct ExternalMetricSelector<'a> {
    pub zoo: &'a ModelZoo,
    pub space: &'a ChoiceSpace,
}

impl Selector for ExternalMetricSelector<'_> {
    fn name(&self) -> &str {
        "exmetric"
    }

    fn select(&self, _sample: &Sample, candidates: &Candidates) -> Result<usize> {
        let c = metric_among(self.zoo, &candidates.allowed);
        self.space
            .index_of(&c)
            .ok_or_else(|| Error::InvalidChoice(format!("{c:?}")))
    }
}

/// Best mean training success among the surviving candidates.
pub struct GlobalBestSelector {
    means: Vec<Option<f64>>,
}

impl GlobalBestSelector {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let means = choice_means(train);
        if means.iter().all(Option::is_none) {
            return Err(Error::NoData);
        }
        Ok(Self { means })
    }

    pub fn means(&self) -> &[Option<f64>] {
        &self.means
    }
}

impl Selector for GlobalBestSelector {
    fn name(&self) -> &str {
        "global_best"
    }

    fn select(&self, _sample: &Sample, candidates: &Candidates) -> Result<usize> {
        Ok(best_mean(&self.means, candidates.indices.iter().copied())
            .unwrap_or(candidates.indices[0]))
    }
}

/// Picks the lowest-index successful candidate; an upper bound for SER.
pub struct OracleSelector {
    rows: HashMap<String, Vec<Option<bool>>>,
}

impl OracleSelector {
    pub fn new(data: &Dataset) -> Self {
        let rows = (0..data.len())
            .map(|i| {
                let row = (0..data.n_choices()).map(|j| data.outcome(i, j)).collect();
                (data.sample(i).sample_id.clone(), row)
            })
            .collect();
        Self { rows }
    }
}

impl Selector for OracleSelector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn select(&self, sample: &Sample, candidates: &Candidates) -> Result<usize> {
        let row = self
            .rows
            .get(&sample.sample_id)
            .ok_or_else(|| Error::UnknownSample(sample.sample_id.clone()))?;
        Ok(candidates
            .indices
            .iter()
            .copied()
            .find(|&j| row[j] == Some(true))
            .unwrap_or(candidates.indices[0]))
    }
}

/// Edge-blind scorer: a two-layer perceptron over `[x W1 ‖ mean_t ψ₂(t, j_t)]`.
///
/// The mean runs over every zoo type, so the score depends on the input
/// and the assignment only, never on the task graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NcfModel<T> {
    pub table: EmbeddingTable<T>,
    pub w1: Matrix<T>,
    pub hidden: Matrix<T>,
    pub hidden_bias: Vec<T>,
    pub out_weight: Vec<T>,
    pub out_bias: T,
}

struct NcfTape<T> {
    z: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

impl<T: Scalar> NcfModel<T> {
    fn choice_embedding(&self, choice: &Choice) -> Vec<T> {
        let k = self.table.n_types();
        let mut m = vec![T::zero(); self.table.dim()];
        for (t, &j) in choice.assignment.iter().enumerate() {
            axpy(T::one(), self.table.embedding(t, j), &mut m);
        }
        let inv = T::one() / T::lit(k as f64);
        m.iter_mut().for_each(|v| *v = *v * inv);
        m
    }

    fn forward(&self, u: &[T], choice: &Choice) -> (T, NcfTape<T>) {
        let mut z = u.to_vec();
        z.extend(self.choice_embedding(choice));
        let mut pre = self.hidden.left_mul(&z);
        for (p, &b) in pre.iter_mut().zip(&self.hidden_bias) {
            *p = *p + b;
        }
        let act: Vec<T> = pre
            .iter()
            .map(|&p| if p > T::zero() { p } else { p.exp_m1() })
            .collect();
        let s = dot(&self.out_weight, &act) + self.out_bias;
        (s, NcfTape { z, pre, act })
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.w1.rows() {
            return Err(Error::DimensionMismatch {
                context: "input embedding".into(),
                expected: self.w1.rows(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Scores with edges ignored; the graph argument exists only to share
    /// the scorer interface.
    pub fn score(&self, x: &[T], choice: &Choice) -> Result<T> {
        self.check_input(x)?;
        Ok(self.forward(&self.w1.left_mul(x), choice).0)
    }
}

impl<T: Scalar> Parameters<T> for NcfModel<T> {
    fn slices(&self) -> Vec<&[T]> {
        vec![
            self.table.weights.as_slice(),
            self.w1.as_slice(),
            self.hidden.as_slice(),
            &self.hidden_bias,
            &self.out_weight,
            std::slice::from_ref(&self.out_bias),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.table.weights.as_mut_slice(),
            self.w1.as_mut_slice(),
            self.hidden.as_mut_slice(),
            &mut self.hidden_bias,
            &mut self.out_weight,
            std::slice::from_mut(&mut self.out_bias),
        ]
    }
}

impl<T: Scalar> Scorer<T> for NcfModel<T> {
    const KIND: &'static str = "ncf";
    type Cache = ();

    fn init(zoo: &ModelZoo, input_dim: usize, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d2, d) = (cfg.model_dim, cfg.hidden);
        let mut m = Self {
            table: EmbeddingTable::zeros(zoo, d2),
            w1: Matrix::zeros(input_dim, d),
            hidden: Matrix::zeros(d + d2, d),
            hidden_bias: vec![T::zero(); d],
            out_weight: vec![T::zero(); d],
            out_bias: T::zero(),
        };
        fill_uniform(&mut rng, m.table.weights.as_mut_slice(), d2);
        fill_uniform(&mut rng, m.w1.as_mut_slice(), input_dim);
        fill_uniform(&mut rng, m.hidden.as_mut_slice(), d + d2);
        fill_uniform(&mut rng, &mut m.out_weight, d);
        m
    }

    fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    fn prepare(&self) {}

    fn logits(&self, _: &(), x: &[T], _graph: &TaskGraph, choices: &[&Choice]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let u = self.w1.left_mul(x);
        Ok(choices.iter().map(|c| self.forward(&u, c).0).collect())
    }

    fn loss_and_grad(
        &self,
        _: &(),
        x: &[T],
        _graph: &TaskGraph,
        choices: &[&Choice],
        labels: &[bool],
        loss: LossKind,
        grads: &mut Self,
    ) -> Result<T> {
        self.check_input(x)?;
        let u = self.w1.left_mul(x);
        let (logits, tapes): (Vec<T>, Vec<NcfTape<T>>) =
            choices.iter().map(|c| self.forward(&u, c)).unzip();
        let (value, d_logits) = loss.evaluate(&ChoiceBatch::dense(&logits, labels));
        let d = u.len();
        let inv_k = T::one() / T::lit(self.table.n_types() as f64);
        let mut du = vec![T::zero(); d];
        for ((tape, c), &ds) in tapes.iter().zip(choices).zip(&d_logits) {
            axpy(ds, &tape.act, &mut grads.out_weight);
            grads.out_bias = grads.out_bias + ds;
            let da: Vec<T> = tape
                .pre
                .iter()
                .zip(&self.out_weight)
                .map(|(&p, &w)| ds * w * if p > T::zero() { T::one() } else { p.exp() })
                .collect();
            grads.hidden.add_outer(&tape.z, &da);
            axpy(T::one(), &da, &mut grads.hidden_bias);
            let dz = self.hidden.mul_transpose(&da);
            axpy(T::one(), &dz[..d], &mut du);
            for (t, &j) in c.assignment.iter().enumerate() {
                let r = self.table.row_index(t, j);
                axpy(inv_k, &dz[d..], grads.table.weights.row_mut(r));
            }
        }
        grads.w1.add_outer(x, &du);
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Category, ModelInfo, SubtaskKind, SubtaskType};

    fn meta_zoo(meta: &[(i64, u64)]) -> ModelZoo {
        let models = meta
            .iter()
            .enumerate()
            .map(|(j, &(r, p))| ModelInfo {
                id: j,
                subtask_type: 0,
                name: format!("m{j}"),
                release_ordinal: r,
                param_count: p,
                avg_exec_time: 0.1,
            })
            .collect();
        let ty = SubtaskType {
            id: 0,
            name: "LOC".into(),
            kind: SubtaskKind::ModelBacked,
        };
        ModelZoo::new(vec![(ty, models)]).unwrap()
    }

    fn sample(id: &str, graph: TaskGraph) -> Sample {
        Sample {
            sample_id: id.into(),
            category: Category::Query,
            graph,
            feature_ref: id.into(),
            program: String::new(),
        }
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn random_is_deterministic_and_uniform() {
        let zoo = ModelZoo::from_counts(&[("LOC", 4)]).unwrap();
        assert_eq!(random_select(&zoo, 3, "s1"), random_select(&zoo, 3, "s1"));
        let mut counts = [0usize; 4];
        for i in 0..10_000 {
            counts[random_select(&zoo, 7, &format!("s{i}")).assignment[0]] += 1;
        }
        let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() < 3.0 * sd, "{counts:?}");
        }
        let single = ModelZoo::from_counts(&[("EVAL", 1), ("CROP", 1)]).unwrap();
        assert_eq!(random_select(&single, 9, "x").assignment, vec![0, 0]);
    }

    #[test]
    fn fixed_validates() {
        let zoo = ModelZoo::from_counts(&[("LOC", 2), ("VQA", 3)]).unwrap();
        let c = Choice::new(vec![0, 2]);
        assert_eq!(fixed_select(&zoo, &c).unwrap(), c);
        assert!(matches!(
            fixed_select(&zoo, &Choice::new(vec![0, 3])),
            Err(Error::InvalidChoice(_))
        ));
    }

    #[test]
    fn external_metric_order() {
        assert_eq!(
            external_metric_select(&meta_zoo(&[(2022, 5), (2023, 1)])).assignment,
            vec![1]
        );
        assert_eq!(
            external_metric_select(&meta_zoo(&[(2023, 100_000_000), (2023, 300_000_000)]))
                .assignment,
            vec![1]
        );
        assert_eq!(
            external_metric_select(&meta_zoo(&[(1, 1), (1, 1), (1, 1)])).assignment,
            vec![0]
        );
    }

    fn grid(rows: &[&[bool]]) -> Dataset {
        let n = rows[0].len();
        let mut ds = Dataset::empty(n);
        for (i, r) in rows.iter().enumerate() {
            let g = TaskGraph::new(format!("s{i}"), vec![0], vec![]).augment_virtual_node();
            ds.push_row(
                sample(&format!("s{i}"), g),
                r.to_vec(),
                vec![true; n],
                vec![None; n],
            );
        }
        ds
    }

    #[test]
    fn global_best_means() {
        let ds = grid(&[
            &[true, true],
            &[true, true],
            &[true, false],
            &[false, true],
            &[false, true],
        ]);
        assert_eq!(global_best_select(&ds).unwrap(), 1);
        let tie = grid(&[&[true, false], &[false, true]]);
        assert_eq!(global_best_select(&tie).unwrap(), 0);
        let mut rev = tie.subset(&[1, 0]);
        assert_eq!(global_best_select(&rev).unwrap(), 0);
        rev = Dataset::empty(2);
        assert!(matches!(global_best_select(&rev), Err(Error::NoData)));
    }

    #[test]
    fn ncf_ignores_edges() {
        let zoo = ModelZoo::from_counts(&[("LOC", 3), ("VQA", 2)]).unwrap();
        let cfg = ModelConfig {
            model_dim: 4,
            hidden: 6,
            layers: 1,
        };
        let m: NcfModel<f64> = NcfModel::init(&zoo, 3, &cfg, 5);
        let space = ChoiceSpace::enumerate(&zoo);
        let refs: Vec<&Choice> = space.choices().iter().collect();
        let x = [0.4, -0.3, 0.9];
        let chain = TaskGraph::new("a", vec![0, 1, 0], vec![(1, 2), (2, 3)]).augment_virtual_node();
        let fan = TaskGraph::new("a", vec![0, 1, 0], vec![(1, 3), (2, 3)]).augment_virtual_node();
        assert_eq!(
            m.logits(&(), &x, &chain, &refs).unwrap(),
            m.logits(&(), &x, &fan, &refs).unwrap()
        );
    }

    #[test]
    fn ncf_gradients_match_central_differences() {
        let zoo = ModelZoo::from_counts(&[("LOC", 3), ("VQA", 2), ("EVAL", 1)]).unwrap();
        let cfg = ModelConfig {
            model_dim: 3,
            hidden: 4,
            layers: 1,
        };
        let m: NcfModel<f64> = NcfModel::init(&zoo, 2, &cfg, 1);
        let space = ChoiceSpace::enumerate(&zoo);
        let refs: Vec<&Choice> = space.choices().iter().collect();
        let labels: Vec<bool> = (0..refs.len()).map(|j| j % 3 == 0).collect();
        let x = [0.7, -0.2];
        let g0 = TaskGraph::new("a", vec![0], vec![]).augment_virtual_node();
        let f = |p: &NcfModel<f64>| {
            p.loss_and_grad(
                &(),
                &x,
                &g0,
                &refs,
                &labels,
                LossKind::Cce,
                &mut p.zeros_like(),
            )
            .unwrap()
        };
        let mut g = m.zeros_like();
        m.loss_and_grad(&(), &x, &g0, &refs, &labels, LossKind::Cce, &mut g)
            .unwrap();
        let analytic = g.flatten();
        let base = m.flatten();
        for k in 0..base.len() {
            let mut p = m.clone();
            let mut v = base.clone();
            v[k] += 1e-6;
            p.assign_flat(&v);
            let up = f(&p);
            v[k] -= 2e-6;
            p.assign_flat(&v);
            let down = f(&p);
            let num = (up - down) / 2e-6;
            let rel = (analytic[k] - num).abs() / analytic[k].abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: {} vs {num}", analytic[k]);
        }
    }

    #[test]
    fn oracle_and_fixed_selectors() {
        let zoo = ModelZoo::from_counts(&[("LOC", 2), ("VQA", 2)]).unwrap();
        let space = ChoiceSpace::enumerate(&zoo);
        let ds = grid(&[&[false, false, true, true]]);
        let all = Candidates::all(&zoo, &space);
        let oracle = OracleSelector::new(&ds);
        assert_eq!(oracle.select(ds.sample(0), &all).unwrap(), 2);
        let fixed = FixedSelector::new(&zoo, &space, Choice::new(vec![1, 1])).unwrap();
        assert_eq!(fixed.select(ds.sample(0), &all).unwrap(), 3);
        let mut limited = all.clone();
        limited.allowed[1] = vec![true, false];
        limited.indices = vec![0, 2];
        assert_eq!(fixed.select(ds.sample(0), &limited).unwrap(), 2);
    }
}
