//! Successful execution rate, breakdowns, sweeps and report files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    ExternalMetricSelector, FixedSelector, GlobalBestSelector, NcfModel, OracleSelector,
    RandomSelector,
};
use crate::benchmark::difficulty_level;
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::graph::{Category, Choice, ChoiceSpace, Dataset, ModelZoo};
use crate::model::{M3Model, Scorer};
use crate::selector::{Candidates, ModelSelector, Selector};
use crate::trainer::{apply_missing, train, MissingMode, TrainConfig, TrainContext};

/// Per-sample success of `selector` on `test`. Samples whose budget leaves a
/// required type without models count as failures.
pub fn hits(
    selector: &dyn Selector,
    test: &Dataset,
    zoo: &ModelZoo,
    space: &ChoiceSpace,
    budget: Option<f64>,
) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(test.len());
    for (i, s) in test.samples().iter().enumerate() {
        let candidates = match Candidates::for_budget(zoo, space, &s.graph, budget) {
            Ok(c) => c,
            Err(Error::InfeasibleBudget { .. }) => {
                out.push(false);
                continue;
            }
            Err(e) => return Err(e),
        };
        let j = selector.select(s, &candidates)?;
        let status = test.outcome(i, j).ok_or_else(|| Error::UnobservedOutcome {
            sample: s.sample_id.clone(),
            choice: j,
        })?;
        out.push(status);
    }
    Ok(out)
}

fn rate(h: &[bool]) -> f64 {
    h.iter().filter(|&&x| x).count() as f64 / h.len() as f64
}

/// Fraction of test samples whose selected choice succeeded.
pub fn ser(
    selector: &dyn Selector,
    test: &Dataset,
    zoo: &ModelZoo,
    space: &ChoiceSpace,
    budget: Option<f64>,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::NoData);
    }
    Ok(rate(&hits(selector, test, zoo, space, budget)?))
}

/// One line of a report. `ser` is absent for empty buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub bucket: String,
    pub ser: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BreakdownBy {
    Category,
    Difficulty,
}

impl FromStr for BreakdownBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "category" => Ok(Self::Category),
            "difficulty" => Ok(Self::Difficulty),
            _ => Err(Error::Config(format!("unknown breakdown `{s}`"))),
        }
    }
}

pub const FULL_BUCKET: &str = "Full";

/// SER per bucket followed by a `Full` row. Categories present in `test`
/// are listed in declaration order; difficulty always lists levels 1 to 5.
pub fn breakdown(
    selector: &dyn Selector,
    test: &Dataset,
    zoo: &ModelZoo,
    space: &ChoiceSpace,
    by: BreakdownBy,
    budget: Option<f64>,
) -> Result<Vec<ReportRow>> {
    let h = hits(selector, test, zoo, space, budget)?;
    let keys: Vec<String> = (0..test.len())
        .map(|i| match by {
            BreakdownBy::Category => test.sample(i).category.to_string(),
            BreakdownBy::Difficulty => {
                let (k, n) = test.success_counts(i);
                format!("level{}", difficulty_level(k, n))
            }
        })
        .collect();
    let buckets: Vec<String> = match by {
        BreakdownBy::Category => Category::ALL
            .iter()
            .map(|c| c.to_string())
            .filter(|c| keys.contains(c))
            .collect(),
        BreakdownBy::Difficulty => (1..=5).map(|l| format!("level{l}")).collect(),
    };
    let row = |bucket: &str, sel: Vec<bool>| ReportRow {
        method: selector.name().to_string(),
        bucket: bucket.to_string(),
        ser: (!sel.is_empty()).then(|| rate(&sel)),
        std: None,
        count: sel.len(),
    };
    let mut rows: Vec<ReportRow> = buckets
        .iter()
        .map(|b| {
            row(
                b,
                h.iter()
                    .zip(&keys)
                    .filter(|(_, k)| *k == b)
                    .map(|(&x, _)| x)
                    .collect(),
            )
        })
        .collect();
    rows.push(row(FULL_BUCKET, h));
    Ok(rows)
}

/// Selection methods known to the evaluation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Random,
    Visprog,
    Exmetric,
    GlobalBest,
    Ncf,
    M3,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Random,
        Method::Visprog,
        Method::Exmetric,
        Method::GlobalBest,
        Method::Ncf,
        Method::M3,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Visprog => "visprog",
            Method::Exmetric => "exmetric",
            Method::GlobalBest => "global_best",
            Method::Ncf => "ncf",
            Method::M3 => "m3",
            Method::Oracle => "oracle",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Method::Ncf | Method::M3)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| {
                m.name() == key
                    || (key == "globalbest" && *m == Method::GlobalBest)
                    || (key == "fixed" && *m == Method::Visprog)
            })
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Shared inputs for fitting and evaluating methods.
#[derive(Clone, Debug)]
pub struct Harness<'a> {
    pub zoo: &'a ModelZoo,
    pub space: &'a ChoiceSpace,
    pub store: &'a FeatureStore,
    pub config: TrainConfig,
    pub jobs: usize,
    /// Assignment used by the `visprog` method; first model per type if unset.
    pub fixed_choice: Option<Choice>,
}

/// A method ready to select.
pub enum Fitted<'a> {
    Random(RandomSelector<'a>),
    Visprog(FixedSelector<'a>),
    Exmetric(ExternalMetricSelector<'a>),
    GlobalBest(GlobalBestSelector),
    Oracle(OracleSelector),
    Ncf(NcfModel<f64>),
    M3(M3Model<f64>),
}

impl<'a> Harness<'a> {
    pub fn new(
        zoo: &'a ModelZoo,
        space: &'a ChoiceSpace,
        store: &'a FeatureStore,
        config: TrainConfig,
    ) -> Self {
        Self {
            zoo,
            space,
            store,
            config,
            jobs: 1,
            fixed_choice: None,
        }
    }

    pub fn context(&self) -> TrainContext<'a> {
        TrainContext {
            zoo: self.zoo,
            space: self.space,
            store: self.store,
            jobs: self.jobs,
        }
    }

    /// Fits `method` on `train` (early stopping on `val`); the oracle reads
    /// `test`. The random baseline uses the config seed.
    pub fn fit(
        &self,
        method: Method,
        train_set: &Dataset,
        val: &Dataset,
        test: &Dataset,
    ) -> Result<Fitted<'a>> {
        let ctx = self.context();
        Ok(match method {
            Method::Random => Fitted::Random(RandomSelector {
                space: self.space,
                seed: self.config.seed,
            }),
            Method::Visprog => {
                let choice = self
                    .fixed_choice
                    .clone()
                    .unwrap_or_else(|| Choice::new(vec![0; self.zoo.n_types()]));
                Fitted::Visprog(FixedSelector::new(self.zoo, self.space, choice)?)
            }
            Method::Exmetric => Fitted::Exmetric(ExternalMetricSelector {
                zoo: self.zoo,
                space: self.space,
            }),
            Method::GlobalBest => Fitted::GlobalBest(GlobalBestSelector::fit(train_set)?),
            Method::Oracle => Fitted::Oracle(OracleSelector::new(test)),
            Method::Ncf => {
                Fitted::Ncf(train::<f64, NcfModel<f64>>(train_set, val, &self.config, &ctx)?.model)
            }
            Method::M3 => {
                Fitted::M3(train::<f64, M3Model<f64>>(train_set, val, &self.config, &ctx)?.model)
            }
        })
    }

    /// Borrows a fitted method as a selector.
    pub fn selector<'s>(&'s self, fitted: &'s Fitted<'a>) -> Box<dyn Selector + 's> {
        match fitted {
            Fitted::Random(s) => Box::new(RandomSelector {
                space: s.space,
                seed: s.seed,
            }),
            Fitted::Visprog(s) => Box::new(FixedSelector {
                space: s.space,
                choice: s.choice.clone(),
            }),
            Fitted::Exmetric(s) => Box::new(ExternalMetricSelector {
                zoo: s.zoo,
                space: s.space,
            }),
            Fitted::GlobalBest(s) => Box::new(Borrowed(s)),
            Fitted::Oracle(s) => Box::new(Borrowed(s)),
            Fitted::Ncf(m) => Box::new(ModelSelector::new(
                NcfModel::<f64>::KIND,
                m,
                self.store,
                self.space,
            )),
            Fitted::M3(m) => Box::new(ModelSelector::new(
                M3Model::<f64>::KIND,
                m,
                self.store,
                self.space,
            )),
        }
    }
}

struct Borrowed<'s, S>(&'s S);

impl<S: Selector> Selector for Borrowed<'_, S> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn select(&self, sample: &crate::graph::Sample, candidates: &Candidates) -> Result<usize> {
        self.0.select(sample, candidates)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For every method, ratio and seed: thin the training split, refit with
/// that seed, and score on the full test split. Rows report mean and
/// sample standard deviation over seeds; the bucket is the ratio.
#[allow(clippy::too_many_arguments)]
pub fn sweep_missing(
    harness: &Harness<'_>,
    methods: &[Method],
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    mode: MissingMode,
    ratios: &[f64],
    seeds: &[u64],
) -> Result<Vec<ReportRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut rows = Vec::new();
    for &method in methods {
        for &ratio in ratios {
            let mut sers = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let thinned = apply_missing(train_set, mode, ratio, seed)?;
                let mut h = harness.clone();
                h.config.seed = seed;
                let fitted = h.fit(method, &thinned, val, test)?;
                sers.push(ser(
                    h.selector(&fitted).as_ref(),
                    test,
                    h.zoo,
                    h.space,
                    None,
                )?);
            }
            let (m, s) = mean_std(&sers);
            rows.push(ReportRow {
                method: method.name().into(),
                bucket: format_number(ratio),
                ser: Some(m),
                std: Some(s),
                count: test.len(),
            });
        }
    }
    Ok(rows)
}

/// SER per selector and budget; `None` is an unlimited budget.
pub fn sweep_time_limit(
    selectors: &[&dyn Selector],
    test: &Dataset,
    zoo: &ModelZoo,
    space: &ChoiceSpace,
    budgets: &[Option<f64>],
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for sel in selectors {
        for &b in budgets {
            rows.push(ReportRow {
                method: sel.name().into(),
                bucket: b.map_or_else(|| "inf".into(), format_number),
                ser: Some(ser(*sel, test, zoo, space, b)?),
                std: None,
                count: test.len(),
            });
        }
    }
    Ok(rows)
}

/// Parses `0.5,0.3,inf`; `inf` and `none` mean no budget.
pub fn parse_budgets(list: &str) -> Result<Vec<Option<f64>>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "none" => Ok(None),
            t => match t.parse::<f64>() {
                Ok(v) if v.is_infinite() && v > 0.0 => Ok(None),
                Ok(v) if v >= 0.0 => Ok(Some(v)),
                _ => Err(Error::Config(format!("bad budget `{s}`"))),
            },
        })
        .collect()
}

fn format_number(x: f64) -> String {
    format!("{x}")
}

/// Mean wall-clock seconds to select for one sample, over `repetitions`
/// timed passes after one warm-up pass.
pub fn measure_latency(
    selector: &dyn Selector,
    data: &Dataset,
    zoo: &ModelZoo,
    space: &ChoiceSpace,
    repetitions: usize,
) -> Result<f64> {
    if data.is_empty() || repetitions == 0 {
        return Err(Error::Config(
            "latency needs samples and at least one repetition".into(),
        ));
    }
    let all = Candidates::all(zoo, space);
    for s in data.samples() {
        std::hint::black_box(selector.select(s, &all)?);
    }
    let start = Instant::now();
    for _ in 0..repetitions {
        for s in data.samples() {
            std::hint::black_box(selector.select(s, &all)?);
        }
    }
    Ok(start.elapsed().as_secs_f64() / (repetitions * data.len()) as f64)
}

/// Mean recorded execution time over all observed entries.
pub fn mean_exec_time(data: &Dataset) -> Option<f64> {
    let times: Vec<f64> = (0..data.len())
        .flat_map(|i| (0..data.n_choices()).filter_map(move |j| data.exec_time(i, j)))
        .collect();
    (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json-lines" | "jsonlines" => Ok(Self::JsonLines),
            _ => Err(Error::UnknownFormat(s.into())),
        }
    }
}

impl ReportFormat {
    /// From a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| Error::UnknownFormat(path.display().to_string()))?
            .parse()
    }
}

pub const CSV_HEADER: &str = "method,bucket,ser,std,count";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        Self { rows }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        if r.headers()?.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
            return Err(Error::format(format!(
                "report header must be `{CSV_HEADER}`"
            )));
        }
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::JsonLines => self.to_json_lines(),
        }
    }

    pub fn parse(text: &str, format: ReportFormat) -> Result<Self> {
        match format {
            ReportFormat::Csv => Self::from_csv(text),
            ReportFormat::JsonLines => Self::from_json_lines(text),
        }
    }

    pub fn emit(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        fs::write(path, self.render(format)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, format: ReportFormat) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, format)
    }
}

/// Writes `report` in `format` given by name.
pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: &str) -> Result<()> {
    report.emit(path, format.parse()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ModelInfo, Sample, SubtaskKind, SubtaskType, TaskGraph};

    fn data(rows: &[&[bool]], cats: &[Category]) -> (Dataset, ModelZoo, ChoiceSpace) {
        let models = (0..rows[0].len())
            .map(|j| ModelInfo {
                id: j,
                subtask_type: 0,
                name: format!("v{j}"),
                release_ordinal: 0,
                param_count: 0,
                avg_exec_time: 0.1,
            })
            .collect();
        let ty = SubtaskType {
            id: 0,
            name: "VQA".into(),
            kind: SubtaskKind::ModelBacked,
        };
        let zoo = ModelZoo::new(vec![(ty, models)]).unwrap();
        let space = ChoiceSpace::enumerate(&zoo);
        let mut ds = Dataset::empty(space.len());
        for (i, r) in rows.iter().enumerate() {
            let id = format!("s{i}");
            ds.push_row(
                Sample {
                    sample_id: id.clone(),
                    category: cats[i % cats.len()],
                    graph: TaskGraph::new(id.clone(), vec![0], vec![(0, 1)]),
                    feature_ref: id,
                    program: String::new(),
                },
                r.to_vec(),
                vec![true; r.len()],
                vec![Some(0.1); r.len()],
            );
        }
        (ds, zoo, space)
    }

    struct Always(usize);
    impl Selector for Always {
        fn name(&self) -> &str {
            "always"
        }
        fn select(&self, _: &Sample, _: &Candidates) -> Result<usize> {
            Ok(self.0)
        }
    }

    #[test]
    fn ser_counts_successes() {
        let (ds, zoo, space) = data(
            &[
                &[true, false],
                &[true, false],
                &[false, true],
                &[true, true],
            ],
            &[Category::Query],
        );
        assert_eq!(ser(&Always(0), &ds, &zoo, &space, None).unwrap(), 0.75);
        assert_eq!(
            ser(&OracleSelector::new(&ds), &ds, &zoo, &space, None).unwrap(),
            1.0
        );
        let (bad, zoo, space) = data(&[&[false, true], &[false, true]], &[Category::Query]);
        assert_eq!(ser(&Always(0), &bad, &zoo, &space, None).unwrap(), 0.0);
    }

    #[test]
    fn unobserved_pick_is_an_error() {
        let (ds, zoo, space) = data(&[&[true, false]], &[Category::Query]);
        let masked = apply_missing(&ds, MissingMode::Choices, 0.99, 1).unwrap();
        let j = (0..2).find(|&j| masked.outcome(0, j).is_none()).unwrap();
        assert!(matches!(
            ser(&Always(j), &masked, &zoo, &space, None),
            Err(Error::UnobservedOutcome { .. })
        ));
    }

    #[test]
    fn breakdown_rows_add_up() {
        let (ds, zoo, space) = data(
            &[
                &[true, false],
                &[false, true],
                &[true, true],
                &[true, false],
                &[false, false],
            ],
            &[Category::Query, Category::Verify],
        );
        let rows = breakdown(&Always(0), &ds, &zoo, &space, BreakdownBy::Category, None).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].bucket, FULL_BUCKET);
        assert_eq!(
            rows[2].ser,
            Some(ser(&Always(0), &ds, &zoo, &space, None).unwrap())
        );
        let weighted: f64 = rows[..2]
            .iter()
            .map(|r| r.ser.unwrap() * r.count as f64)
            .sum::<f64>()
            / 5.0;
        assert!((weighted - rows[2].ser.unwrap()).abs() < 1e-12);

        let rows = breakdown(&Always(0), &ds, &zoo, &space, BreakdownBy::Difficulty, None).unwrap();
        assert_eq!(rows.len(), 6);
        let empty = rows.iter().find(|r| r.count == 0).unwrap();
        assert_eq!(empty.ser, None);
    }

    #[test]
    fn infeasible_budget_counts_as_failure() {
        let (ds, zoo, space) = data(&[&[true, true]], &[Category::Query]);
        let rows = sweep_time_limit(&[&Always(0)], &ds, &zoo, &space, &[None, Some(0.01)]).unwrap();
        assert_eq!(rows[0].ser, Some(1.0));
        assert_eq!(rows[1].ser, Some(0.0));
        assert_eq!(rows[1].bucket, "0.01");
    }

    #[test]
    fn budgets_parse() {
        assert_eq!(
            parse_budgets("inf,0.5,0.3").unwrap(),
            vec![None, Some(0.5), Some(0.3)]
        );
        assert!(parse_budgets("-1").is_err());
    }

    #[test]
    fn methods_parse() {
        assert_eq!(
            parse_methods("random,global_best,m3").unwrap(),
            vec![Method::Random, Method::GlobalBest, Method::M3]
        );
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn report_round_trip() {
        let report = EvalReport::new(vec![
            ReportRow {
                method: "m3".into(),
                bucket: "Full".into(),
                ser: Some(1.0 / 3.0),
                std: None,
                count: 400,
            },
            ReportRow {
                method: "a,b".into(),
                bucket: "level5".into(),
                ser: None,
                std: Some(0.1),
                count: 0,
            },
        ]);
        let csv = report.to_csv().unwrap();
        assert!(csv.starts_with("method,bucket,ser,std,count\n"));
        assert_eq!(EvalReport::from_csv(&csv).unwrap(), report);
        assert_eq!(
            EvalReport::from_json_lines(&report.to_json_lines().unwrap()).unwrap(),
            report
        );
        assert!(matches!(
            "xml".parse::<ReportFormat>(),
            Err(Error::UnknownFormat(_))
        ));
    }

    #[test]
    fn latency_is_positive() {
        let (ds, zoo, space) = data(&[&[true, false]], &[Category::Query]);
        let t = measure_latency(&Always(0), &ds, &zoo, &space, 1).unwrap();
        assert!(t >= 0.0);
        assert_eq!(mean_exec_time(&ds), Some(0.1));
    }
}
