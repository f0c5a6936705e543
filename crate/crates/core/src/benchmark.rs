//! Synthetic benchmarks with planted structure, the on-disk dataset layout,
//! and an adapter for the released MS-GQA files.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::{load_features, FeatureStore};
use crate::graph::{
    Category, ChoiceSpace, Dataset, ExecutionRecord, ModelInfo, ModelZoo, Sample, SubtaskKind,
    SubtaskType,
};
use crate::learner::score_sigmoid;
use crate::program::parse_program;

pub const ZOO_FILE: &str = "zoo.json";
pub const GRAPHS_FILE: &str = "graphs.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";

/// Zoo, choice space, outcome matrix and input features of one benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub zoo: ModelZoo,
    pub space: ChoiceSpace,
    pub dataset: Dataset,
    pub store: FeatureStore,
}

impl Benchmark {
    pub fn new(zoo: ModelZoo, dataset: Dataset, store: FeatureStore) -> Result<Self> {
        let space = ChoiceSpace::enumerate(&zoo);
        if dataset.n_choices() != space.len() {
            return Err(Error::DimensionMismatch {
                context: "outcome matrix width".into(),
                expected: space.len(),
                found: dataset.n_choices(),
            });
        }
        for s in dataset.samples() {
            store.require(&s.feature_ref)?;
        }
        Ok(Self {
            zoo,
            space,
            dataset,
            store,
        })
    }

    pub fn generate(spec: &SynthSpec) -> Result<Self> {
        let (dataset, store, zoo) = generate(spec)?;
        Self::new(zoo, dataset, store)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_dataset_dir(dir, &self.zoo, &self.dataset, &self.store)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (zoo, dataset) = read_dataset_dir(dir)?;
        let path = dir.join(FEATURES_FILE);
        if !path.exists() {
            return Err(Error::MissingFeature(path.display().to_string()));
        }
        Self::new(zoo, dataset, load_features(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub release_ordinal: i64,
    #[serde(default)]
    pub param_count: u64,
    #[serde(default)]
    pub avg_exec_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub name: String,
    pub models: Vec<ModelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub category: Category,
    #[serde(default = "one")]
    pub weight: f64,
    /// Program texts; each sample draws one uniformly.
    pub templates: Vec<String>,
}

fn one() -> f64 {
    1.0
}

/// Recipe for a synthetic benchmark.
///
/// The success logit of a choice on a sample is
/// `base_logit + Σ_nodes (competence[cluster][category][type][model] + jitter)`,
/// where `jitter ~ N(0, noise_scale)` is drawn per sample and model.
/// Competence is drawn `N(0, competence_scale)` per entry plus `model_bias`,
/// unless given explicitly. Features are the cluster centroid plus
/// `N(0, feature_noise)` noise per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub n_clusters: usize,
    pub cluster_separation: f64,
    #[serde(default = "one")]
    pub feature_noise: f64,
    #[serde(default)]
    pub base_logit: f64,
    #[serde(default)]
    pub competence_scale: f64,
    #[serde(default)]
    pub noise_scale: f64,
    /// Types with a single model are deterministic.
    pub zoo: Vec<TypeSpec>,
    pub categories: Vec<CategorySpec>,
    /// Per type name, an offset added to every competence entry of each model.
    #[serde(default)]
    pub model_bias: BTreeMap<String, Vec<f64>>,
    /// `[cluster][category][type][model]`; overrides the random draw.
    #[serde(default)]
    pub competence: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    /// Upper bound on drawn samples, counting degenerate ones.
    #[serde(default)]
    pub max_attempts: Option<usize>,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn build_zoo(&self) -> Result<ModelZoo> {
        let entries = self
            .zoo
            .iter()
            .enumerate()
            .map(|(t, ts)| {
                let kind = if ts.models.len() == 1 {
                    SubtaskKind::Deterministic
                } else {
                    SubtaskKind::ModelBacked
                };
                let models = ts
                    .models
                    .iter()
                    .enumerate()
                    .map(|(j, m)| ModelInfo {
                        id: j,
                        subtask_type: t,
                        name: m.name.clone(),
                        release_ordinal: m.release_ordinal,
                        param_count: m.param_count,
                        avg_exec_time: m.avg_exec_time,
                    })
                    .collect();
                (
                    SubtaskType {
                        id: t,
                        name: ts.name.clone(),
                        kind,
                    },
                    models,
                )
            })
            .collect();
        ModelZoo::new(entries).map_err(|e| Error::Spec(e.to_string()))
    }

    fn validate(&self, zoo: &ModelZoo) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.n_samples == 0 || self.feature_dim == 0 || self.n_clusters == 0 {
            return bad("n_samples, feature_dim and n_clusters must be positive".into());
        }
        if self.categories.is_empty() {
            return bad("no categories".into());
        }
        for c in &self.categories {
            if c.templates.is_empty() {
                return bad(format!("category {} has no templates", c.category));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return bad(format!("category {} has a non-positive weight", c.category));
            }
        }
        let scales = [
            self.cluster_separation,
            self.feature_noise,
            self.competence_scale,
            self.noise_scale,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || !self.base_logit.is_finite() {
            return bad("scales must be finite and non-negative".into());
        }
        for (name, bias) in &self.model_bias {
            let t = zoo
                .type_by_name(name)
                .ok_or_else(|| Error::Spec(format!("model_bias names unknown type `{name}`")))?;
            if bias.len() != zoo.n_models(t) {
                return bad(format!(
                    "model_bias for `{name}` has {} entries",
                    bias.len()
                ));
            }
        }
        if let Some(c) = &self.competence {
            let ok = c.len() == self.n_clusters
                && c.iter().all(|g| {
                    g.len() == self.categories.len()
                        && g.iter().all(|ty| {
                            ty.len() == zoo.n_types()
                                && ty
                                    .iter()
                                    .enumerate()
                                    .all(|(t, m)| m.len() == zoo.n_models(t))
                        })
                });
            if !ok {
                return bad(
                    "competence tensor shape does not match clusters, categories and zoo".into(),
                );
            }
        }
        Ok(())
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Spec(e.to_string()))
}

/// Draws a benchmark from `spec`; degenerate samples are redrawn, so the
/// result holds exactly `n_samples` rows.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, FeatureStore, ModelZoo)> {
    let zoo = spec.build_zoo()?;
    spec.validate(&zoo)?;
    let space = ChoiceSpace::enumerate(&zoo);
    let mut templates = Vec::with_capacity(spec.categories.len());
    for c in &spec.categories {
        let mut parsed = Vec::with_capacity(c.templates.len());
        for text in &c.templates {
            let g = parse_program(text, &zoo)
                .map_err(|e| Error::Spec(format!("template for {}: {e}", c.category)))?;
            parsed.push((text.clone(), g));
        }
        templates.push(parsed);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroid_dist = normal(spec.cluster_separation)?;
    let centroids: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| centroid_dist.sample(&mut rng))
                .collect()
        })
        .collect();
    let competence = match &spec.competence {
        Some(c) => c.clone(),
        None => {
            let dist = normal(spec.competence_scale)?;
            (0..spec.n_clusters)
                .map(|_| {
                    (0..spec.categories.len())
                        .map(|_| {
                            (0..zoo.n_types())
                                .map(|t| {
                                    let bias = spec.model_bias.get(&zoo.subtask_type(t).name);
                                    (0..zoo.n_models(t))
                                        .map(|j| {
                                            let draw = dist.sample(&mut rng);
                                            if zoo.n_models(t) == 1 {
                                                0.0
                                            } else {
                                                draw + bias.map_or(0.0, |b| b[j])
                                            }
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }
    };

    let feature_dist = normal(spec.feature_noise)?;
    let jitter_dist = normal(spec.noise_scale)?;
    let total_weight: f64 = spec.categories.iter().map(|c| c.weight).sum();
    let max_attempts = spec
        .max_attempts
        .unwrap_or(spec.n_samples.saturating_mul(50).max(1000));
    let mut dataset = Dataset::empty(space.len());
    let mut store = FeatureStore::new(spec.feature_dim);
    let mut attempts = 0;
    while dataset.len() < spec.n_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Spec(format!(
                "only {} non-degenerate samples after {max_attempts} draws",
                dataset.len()
            )));
        }
        let cluster = rng.random_range(0..spec.n_clusters);
        let mut u = rng.random::<f64>() * total_weight;
        let mut cat = spec.categories.len() - 1;
        for (g, c) in spec.categories.iter().enumerate() {
            if u < c.weight {
                cat = g;
                break;
            }
            u -= c.weight;
        }
        let (program, graph) = &templates[cat][rng.random_range(0..templates[cat].len())];
        let x: Vec<f64> = centroids[cluster]
            .iter()
            .map(|&c| c + feature_dist.sample(&mut rng))
            .collect();
        let jitter: Vec<Vec<f64>> = (0..zoo.n_types())
            .map(|t| {
                (0..zoo.n_models(t))
                    .map(|_| jitter_dist.sample(&mut rng))
                    .collect()
            })
            .collect();

        let present = graph.present_types();
        let comp = &competence[cluster][cat];
        let mut drawn: HashMap<Vec<usize>, bool> = HashMap::new();
        let mut outcomes = Vec::with_capacity(space.len());
        let mut times = Vec::with_capacity(space.len());
        for c in space.choices() {
            let key: Vec<usize> = (0..zoo.n_types())
                .map(|t| {
                    if present.contains(&t) {
                        c.model_for(t)
                    } else {
                        usize::MAX
                    }
                })
                .collect();
            let status = match drawn.get(&key) {
                Some(&s) => s,
                None => {
                    let logit = spec.base_logit
                        + graph
                            .node_types
                            .iter()
                            .map(|&t| comp[t][c.model_for(t)] + jitter[t][c.model_for(t)])
                            .sum::<f64>();
                    let s = rng.random::<f64>() < score_sigmoid(logit);
                    drawn.insert(key, s);
                    s
                }
            };
            outcomes.push(status);
            times.push(Some(
                graph
                    .node_types
                    .iter()
                    .map(|&t| zoo.model(t, c.model_for(t)).avg_exec_time)
                    .sum::<f64>(),
            ));
        }
        let succ = outcomes.iter().filter(|&&s| s).count();
        if succ == 0 || succ == outcomes.len() {
            continue;
        }
        let id = format!("s{:05}", dataset.len());
        let mut g = graph.clone();
        g.sample_id = id.clone();
        store.insert(id.clone(), x)?;
        dataset.push_row(
            Sample {
                sample_id: id.clone(),
                category: spec.categories[cat].category,
                graph: g,
                feature_ref: id,
                program: program.clone(),
            },
            outcomes,
            vec![true; space.len()],
            times,
        );
    }
    Ok((dataset, store, zoo))
}

#[derive(Serialize, Deserialize)]
struct ZooFileType {
    id: usize,
    name: String,
    kind: SubtaskKind,
    models: Vec<ModelInfo>,
}

#[derive(Serialize, Deserialize)]
struct ZooFile {
    types: Vec<ZooFileType>,
}

#[derive(Serialize, Deserialize)]
struct GraphLine {
    sample_id: String,
    category: Category,
    program: String,
}

#[derive(Serialize, Deserialize)]
struct OutcomeEntry {
    choice_index: usize,
    status: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct OutcomeLine {
    sample_id: String,
    outcomes: Vec<OutcomeEntry>,
}

pub fn zoo_to_json(zoo: &ModelZoo) -> Result<String> {
    let file = ZooFile {
        types: zoo
            .types()
            .iter()
            .enumerate()
            .map(|(t, ty)| ZooFileType {
                id: ty.id,
                name: ty.name.clone(),
                kind: ty.kind,
                models: zoo.models(t).to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn zoo_from_json(text: &str) -> Result<ModelZoo> {
    let file: ZooFile = serde_json::from_str(text)?;
    ModelZoo::new(
        file.types
            .into_iter()
            .map(|t| {
                (
                    SubtaskType {
                        id: t.id,
                        name: t.name,
                        kind: t.kind,
                    },
                    t.models,
                )
            })
            .collect(),
    )
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn write_dataset_dir(
    dir: impl AsRef<Path>,
    zoo: &ModelZoo,
    data: &Dataset,
    store: &FeatureStore,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(ZOO_FILE), zoo_to_json(zoo)?)?;

    let mut graphs = BufWriter::new(File::create(dir.join(GRAPHS_FILE))?);
    let mut outcomes = BufWriter::new(File::create(dir.join(OUTCOMES_FILE))?);
    for (i, s) in data.samples().iter().enumerate() {
        let line = GraphLine {
            sample_id: s.sample_id.clone(),
            category: s.category,
            program: s.program.clone(),
        };
        writeln!(graphs, "{}", serde_json::to_string(&line)?)?;
        let entries = (0..data.n_choices())
            .filter_map(|j| {
                data.outcome(i, j).map(|p| OutcomeEntry {
                    choice_index: j,
                    status: p as u8,
                    time: data.exec_time(i, j),
                })
            })
            .collect();
        let line = OutcomeLine {
            sample_id: s.sample_id.clone(),
            outcomes: entries,
        };
        writeln!(outcomes, "{}", serde_json::to_string(&line)?)?;
    }
    graphs.flush()?;
    outcomes.flush()?;

    let mut features = BufWriter::new(File::create(dir.join(FEATURES_FILE))?);
    let mut sub = FeatureStore::new(store.dim());
    for s in data.samples() {
        if sub.get(&s.feature_ref).is_none() {
            sub.insert(
                s.feature_ref.clone(),
                store.require(&s.feature_ref)?.to_vec(),
            )?;
        }
    }
    sub.write_to(&mut features)?;
    features.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), k + 1)))?,
        );
    }
    Ok(out)
}

/// Reads `zoo.json`, `graphs.jsonl` and `outcomes.jsonl`; programs are
/// re-parsed against the zoo.
pub fn read_dataset_dir(dir: impl AsRef<Path>) -> Result<(ModelZoo, Dataset)> {
    let dir = dir.as_ref();
    let zoo = zoo_from_json(&fs::read_to_string(dir.join(ZOO_FILE))?)?;
    let n_choices = ChoiceSpace::enumerate(&zoo).len();
    let graphs: Vec<GraphLine> = read_jsonl(&dir.join(GRAPHS_FILE))?;
    let outcomes: Vec<OutcomeLine> = read_jsonl(&dir.join(OUTCOMES_FILE))?;
    let mut samples = Vec::with_capacity(graphs.len());
    for g in graphs {
        let mut graph = parse_program(&g.program, &zoo)?;
        graph.sample_id = g.sample_id.clone();
        samples.push(Sample {
            feature_ref: g.sample_id.clone(),
            sample_id: g.sample_id,
            category: g.category,
            graph,
            program: g.program,
        });
    }
    let mut seen = HashMap::new();
    let mut records = Vec::new();
    for line in outcomes {
        if seen.insert(line.sample_id.clone(), ()).is_some() {
            return Err(Error::DuplicateId(line.sample_id));
        }
        for e in line.outcomes {
            if e.status > 1 {
                return Err(Error::format(format!(
                    "status {} for `{}` is not 0 or 1",
                    e.status, line.sample_id
                )));
            }
            records.push(ExecutionRecord {
                sample_id: line.sample_id.clone(),
                choice_index: e.choice_index,
                status: e.status == 1,
                exec_time: e.time,
            });
        }
    }
    if let Some(s) = samples.iter().find(|s| !seen.contains_key(&s.sample_id)) {
        return Err(Error::Join(format!(
            "sample `{}` has no outcome line",
            s.sample_id
        )));
    }
    let data = Dataset::from_records(samples, n_choices, &records)?;
    Ok((zoo, data))
}

/// Difficulty level 1 (easy) to 5 (hard) from `k` successes out of `n`
/// observed choices: level `ℓ` holds `r ∈ [1 − 0.2ℓ, 1.2 − 0.2ℓ)`, with
/// level 1 closed at `r = 1`.
pub fn difficulty_level(successes: usize, observed: usize) -> usize {
    let fifths = 5 * successes / observed.max(1);
    5usize.saturating_sub(fifths).clamp(1, 5)
}

/// Sample ids per difficulty level.
pub fn bucket_difficulty(data: &Dataset) -> BTreeMap<usize, Vec<String>> {
    let mut out: BTreeMap<usize, Vec<String>> = (1..=5).map(|l| (l, Vec::new())).collect();
    for i in 0..data.len() {
        let (k, n) = data.success_counts(i);
        if n == 0 {
            continue;
        }
        out.get_mut(&difficulty_level(k, n))
            .unwrap()
            .push(data.sample(i).sample_id.clone());
    }
    out
}

/// The nine MS-GQA subtask types: LOC and VQA with their candidate lists,
/// the seven code-only functions as single pseudo-models.
///
/// Release dates are the publication venue dates as day ordinals; parameter
/// counts are approximate public figures. Execution times start at zero and
/// are filled in from the execution records by the loader.
pub fn msgqa_zoo() -> ModelZoo {
    // (name, days since epoch, parameters)
    const LOC: [(&str, i64, u64); 10] = [
        ("owlvit-large-patch14", 19_197, 430_000_000),
        ("owlvit-base-patch16", 19_197, 150_000_000),
        ("owlvit-base-patch32", 19_197, 150_000_000),
        ("glip_large", 19_327, 430_000_000),
        ("glip_tiny_a", 19_327, 230_000_000),
        ("glip_tiny_b", 19_327, 230_000_000),
        ("glip_tiny_c", 19_327, 230_000_000),
        ("glip_tiny_ori", 19_327, 230_000_000),
        ("groundingdino_swinb", 19_435, 340_000_000),
        ("groundingdino_swint", 19_435, 170_000_000),
    ];
    const VQA: [(&str, i64, u64); 7] = [
        ("vilt-b32-finetuned-vqa", 18_823, 120_000_000),
        ("git-base-textvqa", 19_205, 180_000_000),
        ("blip-vqa-base", 19_190, 390_000_000),
        ("blip2-opt-2.7b", 19_555, 3_900_000_000),
        ("blip2-flan-t5-xl", 19_555, 4_100_000_000),
        ("instructblip-vicuna-7b", 19_493, 7_900_000_000),
        ("instructblip-flan-t5-xl", 19_493, 4_000_000_000),
    ];
    const FIXED: [&str; 7] = [
        "EVAL",
        "COUNT",
        "CROP",
        "CROPLEFT",
        "CROPRIGHT",
        "CROPABOVE",
        "CROPBELOW",
    ];
    let backed = |t: usize, name: &str, list: &[(&str, i64, u64)]| {
        (
            SubtaskType {
                id: t,
                name: name.into(),
                kind: SubtaskKind::ModelBacked,
            },
            list.iter()
                .enumerate()
                .map(|(j, &(n, r, p))| ModelInfo {
                    id: j,
                    subtask_type: t,
                    name: n.into(),
                    release_ordinal: r,
                    param_count: p,
                    avg_exec_time: 0.0,
                })
                .collect(),
        )
    };
    let mut entries = vec![backed(0, "LOC", &LOC), backed(1, "VQA", &VQA)];
    for (k, name) in FIXED.iter().enumerate() {
        let t = k + 2;
        entries.push((
            SubtaskType {
                id: t,
                name: (*name).into(),
                kind: SubtaskKind::Deterministic,
            },
            vec![ModelInfo {
                id: 0,
                subtask_type: t,
                name: name.to_lowercase(),
                release_ordinal: 0,
                param_count: 0,
                avg_exec_time: 0.0,
            }],
        ));
    }
    ModelZoo::new(entries).expect("builtin zoo is valid")
}

/// Paths of the three released MS-GQA files.
#[derive(Clone, Debug)]
pub struct MsGqaFiles {
    pub instance_results: PathBuf,
    pub graph_descriptions: PathBuf,
    pub questions: PathBuf,
}

impl MsGqaFiles {
    pub const INSTANCE_RESULTS: &'static str = "gqa_model_selection_instance_results.json";
    /// The released name carries this spelling.
    pub const GRAPH_DESCRIPTIONS: &'static str = "gqa_computation_graph_descrption.json";
    pub const QUESTIONS: &'static str = "testdev_balanced_questions.json";

    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let mut graphs = dir.join(Self::GRAPH_DESCRIPTIONS);
        let alt = dir.join("gqa_computation_graph_description.json");
        if !graphs.exists() && alt.exists() {
            graphs = alt;
        }
        Self {
            instance_results: dir.join(Self::INSTANCE_RESULTS),
            graph_descriptions: graphs,
            questions: dir.join(Self::QUESTIONS),
        }
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Join(format!("missing file {}", path.display())),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// `(key, entry)` pairs of a top-level object or array; array entries are
/// keyed by their own id field or their position.
fn entries(v: &Value, id_keys: &[&str]) -> Result<Vec<(String, Value)>> {
    match v {
        Value::Object(m) => Ok(m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        Value::Array(a) => Ok(a
            .iter()
            .enumerate()
            .map(|(i, v)| {
                (
                    field_str(v, id_keys).unwrap_or_else(|| i.to_string()),
                    v.clone(),
                )
            })
            .collect()),
        _ => Err(Error::format(
            "expected a JSON object or array at top level",
        )),
    }
}

fn field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a Value> {
    let m = v.as_object()?;
    keys.iter().find_map(|k| {
        m.get(*k).or_else(|| {
            m.iter()
                .find(|(mk, _)| mk.eq_ignore_ascii_case(k))
                .map(|(_, v)| v)
        })
    })
}

fn field_str(v: &Value, keys: &[&str]) -> Option<String> {
    match field(v, keys)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_status(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_f64().map(|x| x != 0.0),
        Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "1" | "true" | "success" | "succeed" | "succeeded" | "ok" => Some(true),
            "0" | "false" | "fail" | "failed" | "failure" | "error" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Maps upstream VisProg spellings onto the nine MS-GQA names and drops
/// `RESULT` lines, which only forward a value.
pub fn normalize_msgqa_program(text: &str) -> String {
    const ALIASES: [(&str, &str); 4] = [
        ("CROP_LEFTOF", "CROPLEFT"),
        ("CROP_RIGHTOF", "CROPRIGHT"),
        ("CROP_ABOVE", "CROPABOVE"),
        ("CROP_BELOW", "CROPBELOW"),
    ];
    let mut out = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        let func = t
            .split_once('=')
            .and_then(|(_, rest)| rest.split_once('('))
            .map(|(f, _)| f.trim());
        match func {
            Some("RESULT") => continue,
            Some(f) => match ALIASES.iter().find(|(a, _)| *a == f) {
                Some((a, b)) => out.push(t.replacen(a, b, 1)),
                None => out.push(t.to_string()),
            },
            None => out.push(t.to_string()),
        }
    }
    out.join("\n")
}

const ID_KEYS: &[&str] = &["sample_id", "index", "idx", "id"];
const QUESTION_KEYS: &[&str] = &["question_id", "questionId", "qid"];
const PROGRAM_KEYS: &[&str] = &["program", "prog", "programs", "computation_graph"];
const STATUS_KEYS: &[&str] = &["status", "result", "success", "exec_result", "flag"];
const TIME_KEYS: &[&str] = &["time", "cost_time", "cost", "exec_time", "time_cost"];
const RECORD_LIST_KEYS: &[&str] = &["results", "records", "choices", "executions"];

/// Loads the released MS-GQA files into a dataset over [`msgqa_zoo`].
///
/// Key names vary between releases, so each field is looked up under a few
/// common spellings. Execution records name their VQA and LOC models; the
/// mean recorded time of runs using a model becomes its `avg_exec_time`.
/// Degenerate samples are dropped.
pub fn load_msgqa(files: &MsGqaFiles) -> Result<(Dataset, ModelZoo, BTreeMap<String, String>)> {
    let base = msgqa_zoo();
    let space = ChoiceSpace::enumerate(&base);
    let (loc_t, vqa_t) = (0, 1);
    let model_index = |t: usize, name: &str| {
        base.models(t)
            .iter()
            .position(|m| m.name.eq_ignore_ascii_case(name))
    };

    let results = read_json(&files.instance_results)?;
    let graphs = read_json(&files.graph_descriptions)?;
    let questions = read_json(&files.questions)?;

    let mut programs = BTreeMap::new();
    let mut question_of = HashMap::new();
    for (key, v) in entries(&graphs, ID_KEYS)? {
        let program = match field(&v, PROGRAM_KEYS) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(lines)) => lines
                .iter()
                .filter_map(Value::as_str)
                .collect::<Vec<_>>()
                .join("\n"),
            _ => return Err(Error::format(format!("sample `{key}` has no program text"))),
        };
        let sid = field_str(&v, ID_KEYS).unwrap_or_else(|| key.clone());
        question_of.insert(
            sid.clone(),
            field_str(&v, QUESTION_KEYS).unwrap_or(sid.clone()),
        );
        programs.insert(sid, program);
    }
    let mut categories = HashMap::new();
    for (qid, v) in entries(&questions, QUESTION_KEYS)? {
        let structural = field(&v, &["types"])
            .and_then(|t| field_str(t, &["structural"]))
            .or_else(|| field_str(&v, &["structural", "category", "type"]));
        if let Some(s) = structural {
            categories.insert(qid, s.parse::<Category>()?);
        }
    }

    let mut time_sum = [
        vec![0.0; base.n_models(loc_t)],
        vec![0.0; base.n_models(vqa_t)],
    ];
    let mut time_n = [
        vec![0usize; base.n_models(loc_t)],
        vec![0usize; base.n_models(vqa_t)],
    ];
    let mut records = Vec::new();
    let mut result_ids = Vec::new();
    for (key, v) in entries(&results, ID_KEYS)? {
        let sid = field_str(&v, ID_KEYS).unwrap_or(key);
        let list: Vec<Value> = match field(&v, RECORD_LIST_KEYS) {
            Some(Value::Array(a)) => a.clone(),
            Some(Value::Object(m)) => m.values().cloned().collect(),
            _ => match &v {
                Value::Array(a) => a.clone(),
                _ => vec![v.clone()],
            },
        };
        for r in list {
            let loc =
                field_str(&r, &["LOC", "loc", "loc_model"]).and_then(|n| model_index(loc_t, &n));
            let vqa =
                field_str(&r, &["VQA", "vqa", "vqa_model"]).and_then(|n| model_index(vqa_t, &n));
            let (Some(loc), Some(vqa)) = (loc, vqa) else {
                return Err(Error::format(format!(
                    "sample `{sid}`: record lacks known LOC/VQA model names"
                )));
            };
            let status = field(&r, STATUS_KEYS)
                .and_then(parse_status)
                .ok_or_else(|| Error::format(format!("sample `{sid}`: record lacks a status")))?;
            let time = field(&r, TIME_KEYS).and_then(Value::as_f64);
            let mut assignment = vec![0; base.n_types()];
            assignment[loc_t] = loc;
            assignment[vqa_t] = vqa;
            let choice_index = space
                .index_of(&crate::graph::Choice::new(assignment))
                .expect("valid assignment");
            if let Some(t) = time {
                for (slot, j) in [(0, loc), (1, vqa)] {
                    time_sum[slot][j] += t;
                    time_n[slot][j] += 1;
                }
            }
            records.push(ExecutionRecord {
                sample_id: sid.clone(),
                choice_index,
                status,
                exec_time: time,
            });
        }
        result_ids.push(sid);
    }

    let mut entries_out = Vec::with_capacity(base.n_types());
    for (t, ty) in base.types().iter().enumerate() {
        let mut models = base.models(t).to_vec();
        if t <= vqa_t {
            for (j, m) in models.iter_mut().enumerate() {
                if time_n[t][j] > 0 {
                    m.avg_exec_time = time_sum[t][j] / time_n[t][j] as f64;
                }
            }
        }
        entries_out.push((ty.clone(), models));
    }
    let zoo = ModelZoo::new(entries_out)?;

    let mut samples = Vec::with_capacity(result_ids.len());
    for sid in &result_ids {
        let program = programs
            .get(sid)
            .ok_or_else(|| Error::Join(format!("sample `{sid}` has results but no program")))?;
        let qid = &question_of[sid];
        let category = *categories.get(qid).ok_or_else(|| {
            Error::Join(format!("sample `{sid}` (question `{qid}`) has no category"))
        })?;
        let program = normalize_msgqa_program(program);
        let mut graph = parse_program(&program, &zoo)?;
        graph.sample_id = sid.clone();
        samples.push(Sample {
            sample_id: sid.clone(),
            category,
            graph,
            feature_ref: sid.clone(),
            program,
        });
    }
    let data = Dataset::from_records(samples, space.len(), &records)?.filter_degenerate();
    Ok((data, zoo, programs))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_spec() -> SynthSpec {
        SynthSpec::from_json(
            r#"{
                "seed": 3, "n_samples": 40, "feature_dim": 4, "n_clusters": 2,
                "cluster_separation": 2.0, "competence_scale": 1.0, "noise_scale": 0.2,
                "zoo": [
                    {"name": "LOC", "models": [{"name": "l0", "avg_exec_time": 0.1}, {"name": "l1", "avg_exec_time": 0.4}]},
                    {"name": "VQA", "models": [{"name": "v0", "avg_exec_time": 0.2}, {"name": "v1", "avg_exec_time": 0.3}, {"name": "v2", "avg_exec_time": 0.6}]},
                    {"name": "EVAL", "models": [{"name": "eval", "avg_exec_time": 0.01}]}
                ],
                "categories": [
                    {"category": "Query", "templates": ["A=VQA(image=IMAGE,question='q')"]},
                    {"category": "Verify", "templates": ["B=LOC(image=IMAGE,object='o')\nA=VQA(image=B,question='q')\nC=EVAL(expr='{A}')"]}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_non_degenerate() {
        let spec = tiny_spec();
        let a = Benchmark::generate(&spec).unwrap();
        let b = Benchmark::generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.store, b.store);
        assert_eq!(a.dataset.len(), 40);
        assert_eq!(a.dataset.n_choices(), 6);
        assert_eq!(a.dataset.filter_degenerate().len(), 40);
    }

    #[test]
    fn choices_differing_in_absent_types_share_outcomes() {
        let bm = Benchmark::generate(&tiny_spec()).unwrap();
        for (i, s) in bm.dataset.samples().iter().enumerate() {
            if s.category != Category::Query {
                continue;
            }
            // Only VQA runs; LOC is the leading digit of the index.
            for v in 0..3 {
                assert_eq!(bm.dataset.outcome(i, v), bm.dataset.outcome(i, 3 + v));
            }
        }
    }

    #[test]
    fn dataset_dir_round_trip() {
        let bm = Benchmark::generate(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bm.write_dir(dir.path()).unwrap();
        let back = Benchmark::read_dir(dir.path()).unwrap();
        assert_eq!(back.dataset, bm.dataset);
        assert_eq!(back.zoo, bm.zoo);
        assert_eq!(back.store, bm.store);
        let bytes = |p: &Path| fs::read(p).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        back.write_dir(dir2.path()).unwrap();
        for f in [ZOO_FILE, GRAPHS_FILE, OUTCOMES_FILE, FEATURES_FILE] {
            assert_eq!(
                bytes(&dir.path().join(f)),
                bytes(&dir2.path().join(f)),
                "{f}"
            );
        }
    }

    #[test]
    fn missing_features_file_is_reported() {
        let bm = Benchmark::generate(&tiny_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bm.write_dir(dir.path()).unwrap();
        fs::remove_file(dir.path().join(FEATURES_FILE)).unwrap();
        assert!(matches!(
            Benchmark::read_dir(dir.path()),
            Err(Error::MissingFeature(_))
        ));
    }

    #[test]
    fn bad_spec_is_rejected() {
        let mut spec = tiny_spec();
        spec.categories[0].templates.clear();
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
        assert!(matches!(
            SynthSpec::from_json("{\"seed\": 1}"),
            Err(Error::Spec(_))
        ));
        let mut spec = tiny_spec();
        spec.categories[0].templates[0] = "A=FOO(x=1)".into();
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn unbiased_coin_success_rate() {
        let mut spec = tiny_spec();
        spec.competence_scale = 0.0;
        spec.noise_scale = 0.0;
        spec.n_samples = 400;
        let bm = Benchmark::generate(&spec).unwrap();
        let (mut k, mut n) = (0, 0);
        for i in 0..bm.dataset.len() {
            let (s, o) = bm.dataset.success_counts(i);
            k += s;
            n += o;
        }
        let p = k as f64 / n as f64;
        let sd = (0.25 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 2.0 * sd.max(0.01), "rate {p}");
    }

    #[test]
    fn difficulty_levels() {
        assert_eq!(difficulty_level(7, 20), 4);
        assert_eq!(difficulty_level(19, 20), 1);
        assert_eq!(difficulty_level(1, 5), 4);
        assert_eq!(difficulty_level(5, 5), 1);
        assert_eq!(difficulty_level(4, 5), 1);
        assert_eq!(difficulty_level(1, 70), 5);
        assert_eq!(difficulty_level(2, 5), 3);
    }

    #[test]
    fn buckets_partition_the_dataset() {
        let bm = Benchmark::generate(&tiny_spec()).unwrap();
        let b = bucket_difficulty(&bm.dataset);
        let mut all: Vec<String> = b.values().flatten().cloned().collect();
        all.sort();
        let mut ids: Vec<String> = bm
            .dataset
            .samples()
            .iter()
            .map(|s| s.sample_id.clone())
            .collect();
        ids.sort();
        assert_eq!(all, ids);
    }

    #[test]
    fn msgqa_zoo_has_seventy_choices() {
        let zoo = msgqa_zoo();
        assert_eq!(ChoiceSpace::enumerate(&zoo).len(), 70);
        assert_eq!(zoo.model(1, 5).name, "instructblip-vicuna-7b");
        assert_eq!(zoo.n_types(), 9);
    }

    #[test]
    fn upstream_spellings_are_normalized() {
        let p = "B=LOC(image=IMAGE,object='x')\nC=CROP_LEFTOF(image=IMAGE,box=B)\nFINAL_RESULT=RESULT(var=C)";
        assert_eq!(
            normalize_msgqa_program(p),
            "B=LOC(image=IMAGE,object='x')\nC=CROPLEFT(image=IMAGE,box=B)"
        );
    }

    #[test]
    fn msgqa_adapter_reads_small_files() {
        let dir = tempfile::tempdir().unwrap();
        let results = r#"{"1": [
            {"VQA": "instructblip-vicuna-7b", "LOC": "groundingdino_swint", "result": "success", "time": 0.887},
            {"VQA": "blip-vqa-base", "LOC": "glip_large", "result": "fail", "time": 0.5}
        ]}"#;
        let graphs = r#"[{"index": 1, "question_id": "q9", "image_id": "n1", "question": "?",
            "program": "BOX0=LOC(image=IMAGE,object='cup')\nANSWER0=VQA(image=IMAGE,question='color?')\nFINAL_RESULT=RESULT(var=ANSWER0)"}]"#;
        let questions = r#"{"q9": {"types": {"structural": "query", "semantic": "attr"}}}"#;
        fs::write(dir.path().join(MsGqaFiles::INSTANCE_RESULTS), results).unwrap();
        fs::write(dir.path().join(MsGqaFiles::GRAPH_DESCRIPTIONS), graphs).unwrap();
        fs::write(dir.path().join(MsGqaFiles::QUESTIONS), questions).unwrap();
        let (data, zoo, _) = load_msgqa(&MsGqaFiles::in_dir(dir.path())).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.n_choices(), 70);
        let j = 9 * 7 + 5;
        assert_eq!(data.outcome(0, j), Some(true));
        assert_eq!(data.exec_time(0, j), Some(0.887));
        assert_eq!(data.sample(0).category, Category::Query);
        assert!((zoo.model(0, 9).avg_exec_time - 0.887).abs() < 1e-12);

        fs::remove_file(dir.path().join(MsGqaFiles::QUESTIONS)).unwrap();
        assert!(matches!(
            load_msgqa(&MsGqaFiles::in_dir(dir.path())),
            Err(Error::Join(_))
        ));
    }
}
