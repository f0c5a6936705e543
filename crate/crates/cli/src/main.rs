//! `m3`: generate benchmarks, train scorers, evaluate and select.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use m3_core::baselines::NcfModel;
use m3_core::benchmark::{load_msgqa, write_dataset_dir, Benchmark, MsGqaFiles, SynthSpec};
use m3_core::eval::{
    breakdown, mean_exec_time, measure_latency, parse_budgets, parse_methods, sweep_missing,
    sweep_time_limit, BreakdownBy, EvalReport, Fitted, Harness, Method, ReportFormat,
};
use m3_core::features::load_features;
use m3_core::learner::score_sigmoid;
use m3_core::objective::LossKind;
use m3_core::optim::OptimizerKind;
use m3_core::selector::{top_k, Candidates, ModelSelector, Selector};
use m3_core::trainer::{
    history_csv, load_checkpoint, split, train, Checkpoint, MissingMode, SplitSpec, TrainConfig,
    TrainContext,
};
use m3_core::{Choice, Error, M3Model64, NcfModel64, Scorer};

#[derive(Parser)]
#[command(
    name = "m3",
    version,
    about = "Select models for multi-step reasoning pipelines"
)]
struct Cli {
    /// Worker threads for training and validation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark directory from a spec file.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a scorer and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate selection methods and write a report.
    Eval(EvalArgs),
    /// Pick the best choice for one sample.
    Select(SelectArgs),
    /// Convert the released MS-GQA files into a benchmark directory.
    ImportMsgqa {
        /// Directory holding the three released files.
        #[arg(long)]
        dir: PathBuf,
        /// Input embeddings, one `{sample_id, embedding}` object per line.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Benchmark directory; defaults to `$M3_DATA_DIR`.
    #[arg(long, env = "M3_DATA_DIR")]
    data: PathBuf,
    /// Seed of the 6:2:2 train/val/test split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> m3_core::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { c.$field = v; })*
            };
        }
        set!(seed => seed, lr => lr, weight_decay => weight_decay, optimizer => optimizer, loss => loss,
            hidden => hidden_d, model_dim => model_dim, layers => layers, batch_size => batch_size,
            epochs => max_epochs, patience => patience);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Scorer to train: `m3` or `ncf`.
    #[arg(long, default_value = "m3")]
    model: String,
    #[arg(long, default_value = "checkpoint.json")]
    out: PathBuf,
    /// Per-epoch history CSV; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained graph-learner checkpoint; the `m3` method is retrained when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "random,visprog,exmetric,global_best,m3,oracle")]
    methods: String,
    /// Breakdown: `category` or `difficulty`.
    #[arg(long, default_value = "category")]
    by: String,
    /// Missing-data sweep mode: `choices` or `samples`.
    #[arg(long, requires = "ratios")]
    missing_mode: Option<MissingMode>,
    /// Comma-separated missing ratios; switches to the missing-data sweep.
    #[arg(long)]
    ratios: Option<String>,
    /// Comma-separated seeds for the missing-data sweep.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Comma-separated time budgets in seconds (`inf` allowed); switches to the time-limit sweep.
    #[arg(long, conflicts_with = "ratios")]
    budgets: Option<String>,
    /// Fixed assignment for the `visprog` method, one model index per type.
    #[arg(long)]
    fixed: Option<String>,
    /// Report path; CSV on stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` or `jsonl`; inferred from the output extension by default.
    #[arg(long)]
    format: Option<String>,
    /// Also time selection over the test split (printed, not written to the report).
    #[arg(long)]
    latency: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long, env = "M3_DATA_DIR")]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sample: String,
    /// Drop models whose mean execution time exceeds this many seconds.
    #[arg(long)]
    budget: Option<f64>,
    /// Print the best `k` choices instead of one.
    #[arg(long)]
    topk: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownFormat(_) => 2,
        Error::NonFiniteLoss { .. } | Error::Shape(_) => 4,
        Error::InfeasibleBudget { .. } => 5,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> m3_core::Result<()> {
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Gen { spec, out } => {
            let bm = Benchmark::generate(&SynthSpec::load(&spec)?)?;
            bm.write_dir(&out)?;
            println!(
                "wrote {} samples over {} choices to {}",
                bm.dataset.len(),
                bm.space.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train(args) => cmd_train(args, jobs),
        Command::Eval(args) => cmd_eval(args, jobs),
        Command::Select(args) => cmd_select(args),
        Command::ImportMsgqa { dir, features, out } => {
            let (data, zoo, _) = load_msgqa(&MsGqaFiles::in_dir(&dir))?;
            let store = load_features(&features)?;
            write_dataset_dir(&out, &zoo, &data, &store)?;
            println!("wrote {} samples to {}", data.len(), out.display());
            Ok(())
        }
    }
}

fn cmd_train(args: TrainArgs, jobs: usize) -> m3_core::Result<()> {
    let config = args.config.resolve()?;
    let bm = Benchmark::read_dir(&args.data.data)?;
    let (tr, va, _) = split(
        &bm.dataset,
        &SplitSpec {
            seed: args.data.split_seed,
            ..SplitSpec::default()
        },
    );
    let ctx = TrainContext {
        zoo: &bm.zoo,
        space: &bm.space,
        store: &bm.store,
        jobs,
    };
    let (checkpoint, history) = match args.model.as_str() {
        "m3" => {
            let o = train::<f64, M3Model64>(&tr, &va, &config, &ctx)?;
            (o.checkpoint, o.history)
        }
        "ncf" => {
            let o = train::<f64, NcfModel64>(&tr, &va, &config, &ctx)?;
            (o.checkpoint, o.history)
        }
        other => return Err(Error::Config(format!("unknown model `{other}`"))),
    };
    checkpoint.save(&args.out)?;
    let history_path = args
        .history
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    std::fs::write(&history_path, history_csv(&history))?;
    println!(
        "best epoch {} of {}, val SER {:.4}",
        checkpoint.epoch,
        history.len(),
        checkpoint.val_ser
    );
    Ok(())
}

fn parse_choice(text: &str, n_types: usize) -> m3_core::Result<Choice> {
    let a: Vec<usize> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad model index `{s}`")))
        })
        .collect::<m3_core::Result<_>>()?;
    if a.len() != n_types {
        return Err(Error::Config(format!(
            "--fixed needs {n_types} indices, got {}",
            a.len()
        )));
    }
    Ok(Choice::new(a))
}

fn restore_m3(path: &Path, bm: &Benchmark) -> m3_core::Result<M3Model64> {
    let ck: Checkpoint = load_checkpoint(path)?;
    let model: M3Model64 = ck.restore(&bm.zoo)?;
    if model.input_dim() != bm.store.dim() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint input width".into(),
            expected: bm.store.dim(),
            found: model.input_dim(),
        });
    }
    Ok(model)
}

fn cmd_eval(args: EvalArgs, jobs: usize) -> m3_core::Result<()> {
    let config = args.config.resolve()?;
    let methods = parse_methods(&args.methods)?;
    let by: BreakdownBy = args.by.parse()?;
    let format = match (&args.format, &args.out) {
        (Some(f), _) => f.parse()?,
        (None, Some(p)) => ReportFormat::from_path(p)?,
        (None, None) => ReportFormat::Csv,
    };
    let bm = Benchmark::read_dir(&args.data.data)?;
    let (tr, va, te) = split(
        &bm.dataset,
        &SplitSpec {
            seed: args.data.split_seed,
            ..SplitSpec::default()
        },
    );
    let mut harness = Harness::new(&bm.zoo, &bm.space, &bm.store, config);
    harness.jobs = jobs;
    if let Some(f) = &args.fixed {
        harness.fixed_choice = Some(parse_choice(f, bm.zoo.n_types())?);
    }

    let rows = if let Some(ratios) = &args.ratios {
        let ratios: Vec<f64> = ratios
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad ratio `{s}`")))
            })
            .collect::<m3_core::Result<_>>()?;
        let seeds: Vec<u64> = args
            .seeds
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed `{s}`")))
            })
            .collect::<m3_core::Result<_>>()?;
        let mode = args.missing_mode.unwrap_or(MissingMode::Choices);
        sweep_missing(&harness, &methods, &tr, &va, &te, mode, &ratios, &seeds)?
    } else {
        let mut fitted = Vec::with_capacity(methods.len());
        for &m in &methods {
            fitted.push(match (m, &args.checkpoint) {
                (Method::M3, Some(p)) => Fitted::M3(restore_m3(p, &bm)?),
                _ => harness.fit(m, &tr, &va, &te)?,
            });
        }
        let selectors: Vec<Box<dyn Selector + '_>> =
            fitted.iter().map(|f| harness.selector(f)).collect();
        if args.latency {
            for s in &selectors {
                let t = measure_latency(s.as_ref(), &te, &bm.zoo, &bm.space, 3)?;
                println!("latency {}: {:.3} ms per sample", s.name(), t * 1e3);
            }
            if let Some(t) = mean_exec_time(&te) {
                println!("mean recorded execution time: {t:.3} s");
            }
        }
        match &args.budgets {
            Some(b) => {
                let budgets = parse_budgets(b)?;
                let refs: Vec<&dyn Selector> = selectors.iter().map(|s| s.as_ref()).collect();
                sweep_time_limit(&refs, &te, &bm.zoo, &bm.space, &budgets)?
            }
            None => {
                let mut rows = Vec::new();
                for s in &selectors {
                    rows.extend(breakdown(s.as_ref(), &te, &bm.zoo, &bm.space, by, None)?);
                }
                rows
            }
        }
    };
    let report = EvalReport::new(rows);
    match &args.out {
        Some(p) => {
            report.emit(p, format)?;
            println!("wrote {} rows to {}", report.rows.len(), p.display());
        }
        None => print!("{}", report.render(format)?),
    }
    Ok(())
}

fn cmd_select(args: SelectArgs) -> m3_core::Result<()> {
    let bm = Benchmark::read_dir(&args.data)?;
    let i = bm
        .dataset
        .position(&args.sample)
        .ok_or_else(|| Error::UnknownSample(args.sample.clone()))?;
    let sample = bm.dataset.sample(i);
    let ck = load_checkpoint(&args.checkpoint)?;
    let candidates = Candidates::for_budget(&bm.zoo, &bm.space, &sample.graph, args.budget)?;
    let scores = match ck.kind.as_str() {
        NcfModel64::KIND => {
            let m: NcfModel<f64> = ck.restore(&bm.zoo)?;
            ModelSelector::new("ncf", &m, &bm.store, &bm.space)
                .scores(sample, &candidates.indices)?
        }
        _ => {
            let m = restore_m3(&args.checkpoint, &bm)?;
            ModelSelector::new("m3", &m, &bm.store, &bm.space)
                .scores(sample, &candidates.indices)?
        }
    };
    let ranked = top_k(&scores, args.topk.unwrap_or(1));
    let describe = |c: &Choice| {
        c.assignment
            .iter()
            .enumerate()
            .filter(|(t, _)| bm.zoo.n_models(*t) > 1)
            .map(|(t, &j)| {
                format!(
                    "{}={}",
                    bm.zoo.subtask_type(t).name,
                    bm.zoo.model(t, j).name
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    if args.topk.is_none() {
        let (p, s) = ranked[0];
        let idx = candidates.indices[p];
        let c = bm.space.get(idx);
        for (t, &j) in c.assignment.iter().enumerate() {
            if sample.graph.node_types.contains(&t) {
                println!(
                    "{}: {}",
                    bm.zoo.subtask_type(t).name,
                    bm.zoo.model(t, j).name
                );
            }
        }
        println!("choice {idx} score {s:.6} p {:.6}", score_sigmoid(s));
    } else {
        for (rank, &(p, s)) in ranked.iter().enumerate() {
            let idx = candidates.indices[p];
            println!(
                "{} choice {idx} score {s:.6} p {:.6} {}",
                rank + 1,
                score_sigmoid(s),
                describe(bm.space.get(idx))
            );
        }
    }
    Ok(())
}
