//! `kfacbench`: generate data, train single runs, execute grid studies and
//! turn study directories into plot-ready reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 finished with
//! diverged runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kfac_bench::analysis::{self, Basis, Metric};
use kfac_bench::budget::{Budget, LrSchedule};
use kfac_bench::fisher::DampingKind;
use kfac_bench::model::{Activation, FisherMode};
use kfac_bench::optim::{train_run, KfacConfig, OptimizerConfig, RunConfig, SgdConfig, DEFAULT_WEIGHT_DECAY};
use kfac_bench::search::{run_grid, DatasetSpec, GridSpec, NetworkSpec, RunSet, StudyManifest, MANIFEST_SCHEMA};
use kfac_bench::{fsutil, rng, Error, Result};

const THREADS_ENV: &str = "KFACBENCH_THREADS";
const RUN_SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "kfacbench", version, about = "K-FAC and SGD large-batch benchmark harness")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its train/test split as CSV.
    GenerateData(GenerateArgs),
    /// Train a single configuration and write `run.json`.
    Run(Box<RunArgs>),
    /// Execute (or resume) a grid study.
    Grid(GridArgs),
    /// Produce reports from a study directory.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Blobs,
    Linreg,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "blobs")]
    kind: DataKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Number of classes (blobs only).
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.15)]
    spread: f64,
    /// Label noise standard deviation (linreg only).
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptKind {
    Sgd,
    Kfac,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Normal,
    Approximated,
}

#[derive(Clone, Copy, ValueEnum)]
enum FisherArg {
    Empirical,
    Sampled,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    optimizer: Option<OptKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Decay of the factor moving averages.
    #[arg(long)]
    stat_decay: Option<f64>,
    #[arg(long)]
    clip_kappa: Option<f64>,
    #[arg(long, conflicts_with = "clip_kappa")]
    no_clip: bool,
    #[arg(long, value_enum)]
    damping_scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    fisher_mode: Option<FisherArg>,
    #[arg(long)]
    t_inv: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fixed epoch budget.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Directory receiving `run.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// JSON study configuration.
    #[arg(long)]
    config: PathBuf,
    /// Study directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent runs; falls back to the config, then KFACBENCH_THREADS, then 1.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
}

#[derive(Args)]
struct StudyArgs {
    /// Study directory produced by `grid`.
    #[arg(long)]
    study: PathBuf,
    /// Report directory; defaults to `<study>/reports`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Analyze whatever runs exist instead of requiring all of them.
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    TrainLoss,
    TestAccuracy,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::TrainLoss => Metric::TrainLoss,
            MetricArg::TestAccuracy => Metric::TestAccuracy,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BasisArg {
    Epochs,
    Iterations,
    Both,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Select and print the per-stage targets.
    Targets(StudyArgs),
    /// Iterations to each target and speedup over the reference batch size.
    Speedup {
        #[command(flatten)]
        study: StudyArgs,
        /// Defaults to the smallest batch size in the study.
        #[arg(long)]
        reference_batch: Option<usize>,
    },
    /// Best metric per grid cell.
    Heatmap {
        #[command(flatten)]
        study: StudyArgs,
        /// Batch sizes to tabulate; defaults to all.
        #[arg(long, value_delimiter = ',')]
        batch: Vec<usize>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
    /// Distribution over configs of the best metric by each checkpoint.
    Robustness {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, value_enum, default_value = "both")]
        basis: BasisArg,
        /// Defaults to every distinct run length in the study.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<usize>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
}

fn one() -> usize {
    1
}

/// Single-run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSpec {
    schema: u32,
    dataset: DatasetSpec,
    network: NetworkSpec,
    optimizer: OptimizerConfig,
    batch_size: usize,
    budget: Budget,
    schedule: LrSchedule,
    seed: u64,
    #[serde(default = "one")]
    record_every: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            schema: RUN_SCHEMA,
            dataset: DatasetSpec::Blobs { seed: 0, n: 1024, d: 10, k: 4, spread: 0.15 },
            network: NetworkSpec { hidden: vec![32, 32], activation: Activation::Relu },
            optimizer: OptimizerConfig::Sgd(SgdConfig {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: DEFAULT_WEIGHT_DECAY,
            }),
            batch_size: 32,
            budget: Budget::fixed_epochs(10),
            schedule: LrSchedule::constant(),
            seed: 0,
            record_every: 1,
        }
    }
}

/// Grid configuration file: the study manifest plus execution settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyConfig {
    schema: u32,
    study_id: String,
    dataset: DatasetSpec,
    network: NetworkSpec,
    grids: Vec<GridSpec>,
    batch_sizes: Vec<usize>,
    budget: Budget,
    schedule: LrSchedule,
    base_seed: u64,
    #[serde(default = "one")]
    replicas: usize,
    #[serde(default = "one")]
    record_every: usize,
    #[serde(default)]
    parallelism: Option<usize>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

impl StudyConfig {
    fn manifest(&self) -> StudyManifest {
        StudyManifest {
            schema: self.schema,
            study_id: self.study_id.clone(),
            dataset: self.dataset,
            network: self.network.clone(),
            grids: self.grids.clone(),
            batch_sizes: self.batch_sizes.clone(),
            budget: self.budget,
            schedule: self.schedule.clone(),
            base_seed: self.base_seed,
            replicas: self.replicas,
            record_every: self.record_every,
        }
    }
}

/// Outcome that maps to a non-zero exit code without being an error.
enum Outcome {
    Ok,
    Diverged,
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::param("config", format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::param("config", format!("{}: {e}", path.display())))
}

fn generate(args: &GenerateArgs) -> Result<Outcome> {
    let spec = match args.kind {
        DataKind::Blobs => DatasetSpec::Blobs {
            seed: args.seed,
            n: args.n,
            d: args.d,
            k: args.k,
            spread: args.spread,
        },
        DataKind::Linreg => DatasetSpec::Linreg {
            seed: args.seed,
            n: args.n,
            d: args.d,
            noise_sd: args.noise_sd,
        },
    };
    let full = spec.generate()?;
    let (train, test) = spec.materialize()?;
    fsutil::write_json(&args.out.join("dataset.json"), &spec)?;
    full.write_csv(&args.out.join("data.csv"))?;
    train.write_csv(&args.out.join("train.csv"))?;
    test.write_csv(&args.out.join("test.csv"))?;
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        full.len(),
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(Outcome::Ok)
}

fn kfac_only(field: &str) -> Error {
    Error::param(field, "only applies to --optimizer kfac")
}

/// Applies flag overrides to the optimizer section.
fn override_optimizer(base: OptimizerConfig, a: &RunArgs) -> Result<OptimizerConfig> {
    let mut opt = match (a.optimizer, base) {
        (Some(OptKind::Kfac), OptimizerConfig::Sgd(s)) => {
            let mut k = KfacConfig::new(s.lr, 1e-3);
            k.weight_decay = s.weight_decay;
            OptimizerConfig::Kfac(k)
        }
        (Some(OptKind::Sgd), OptimizerConfig::Kfac(k)) => OptimizerConfig::Sgd(SgdConfig {
            lr: k.lr,
            momentum: 0.9,
            weight_decay: k.weight_decay,
        }),
        (_, b) => b,
    };
    match &mut opt {
        OptimizerConfig::Sgd(s) => {
            if let Some(v) = a.lr {
                s.lr = v;
            }
            if let Some(v) = a.momentum {
                s.momentum = v;
            }
            if let Some(v) = a.weight_decay {
                s.weight_decay = v;
            }
            for (given, name) in [
                (a.damping.is_some(), "damping"),
                (a.stat_decay.is_some(), "stat_decay"),
                (a.clip_kappa.is_some() || a.no_clip, "clip_kappa"),
                (a.damping_scheme.is_some(), "damping_scheme"),
                (a.fisher_mode.is_some(), "fisher_mode"),
                (a.t_inv.is_some(), "t_inv"),
            ] {
                if given {
                    return Err(kfac_only(name));
                }
            }
        }
        OptimizerConfig::Kfac(k) => {
            if a.momentum.is_some() {
                return Err(Error::param("momentum", "only applies to --optimizer sgd"));
            }
            if let Some(v) = a.lr {
                k.lr = v;
            }
            if let Some(v) = a.damping {
                k.damping = v;
            }
            if let Some(v) = a.weight_decay {
                k.weight_decay = v;
            }
            if let Some(v) = a.stat_decay {
                k.decay = v;
            }
            if let Some(v) = a.clip_kappa {
                k.clip_kappa = Some(v);
            }
            if a.no_clip {
                k.clip_kappa = None;
            }
            if let Some(s) = a.damping_scheme {
                k.scheme = match s {
                    SchemeArg::Normal => DampingKind::Normal,
                    SchemeArg::Approximated => DampingKind::Approximated,
                };
            }
            if let Some(f) = a.fisher_mode {
                k.fisher_mode = match f {
                    FisherArg::Empirical => FisherMode::Empirical,
                    FisherArg::Sampled => FisherMode::Sampled,
                };
            }
            if let Some(t) = a.t_inv {
                k.t_inv = t;
            }
        }
    }
    opt.validate()?;
    Ok(opt)
}

fn run(a: &RunArgs) -> Result<Outcome> {
    let mut spec = match &a.config {
        Some(p) => read_config::<RunSpec>(p)?,
        None => RunSpec::default(),
    };
    if spec.schema != RUN_SCHEMA {
        return Err(Error::param("schema", format!("unsupported schema {}", spec.schema)));
    }
    spec.optimizer = override_optimizer(spec.optimizer, a)?;
    if let Some(b) = a.batch_size {
        spec.batch_size = b;
    }
    if let Some(e) = a.epochs {
        spec.budget = Budget::fixed_epochs(e);
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(r) = a.record_every {
        spec.record_every = r;
    }
    let cfg = RunConfig {
        optimizer: spec.optimizer,
        batch_size: spec.batch_size,
        budget: spec.budget,
        schedule: spec.schedule.clone(),
        seed: spec.seed,
        record_every: spec.record_every,
        replica: 0,
    };
    cfg.validate()?;
    let (train, test) = spec.dataset.materialize()?;
    let net = spec.network.build(&train, rng::derive_seed(spec.seed, "init"))?;
    let rec = train_run(&net, &train, &test, &cfg)?;
    fsutil::write_json(&a.out.join("run.json"), &rec)?;
    let last = |v: &[f64]| v.last().map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} run {}: {} after {} iterations; final train loss {}, test accuracy {}",
        rec.method().name(),
        rec.config_hash,
        if rec.diverged() { "diverged" } else { "completed" },
        rec.iterations,
        last(&rec.train_loss),
        last(&rec.test_accuracy),
    );
    Ok(if rec.diverged() { Outcome::Diverged } else { Outcome::Ok })
}

fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::param(THREADS_ENV, format!("{v:?} is not a count"))),
        Err(_) => Ok(None),
    }
}

fn grid(a: &GridArgs) -> Result<Outcome> {
    let mut cfg: StudyConfig = read_config(&a.config)?;
    if let Some(s) = a.base_seed {
        cfg.base_seed = s;
    }
    let parallelism = match a.parallelism.or(cfg.parallelism) {
        Some(p) => p,
        None => env_threads()?.unwrap_or(1),
    };
    if parallelism == 0 {
        return Err(Error::param("parallelism", "must be at least 1"));
    }
    let dir = a
        .out
        .clone()
        .or(cfg.output_dir.clone())
        .ok_or_else(|| Error::param("output_dir", "give --out or output_dir in the config"))?;
    let manifest = cfg.manifest();
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(Error::param("schema", format!("unsupported schema {}", manifest.schema)));
    }
    let set = run_grid(&manifest, Some(&dir), parallelism)?;
    let diverged = set.diverged_count();
    println!(
        "study {} ({}): {} runs, {} diverged, in {}",
        manifest.study_id,
        manifest.hash(),
        set.records.len(),
        diverged,
        dir.display()
    );
    Ok(if diverged > 0 { Outcome::Diverged } else { Outcome::Ok })
}

fn load(s: &StudyArgs) -> Result<(RunSet, PathBuf)> {
    if !s.study.join("manifest.json").is_file() {
        return Err(Error::Study(format!("no study found at {}", s.study.display())));
    }
    let set = RunSet::load(&s.study, s.allow_partial)?;
    let out = s.out.clone().unwrap_or_else(|| s.study.join("reports"));
    Ok((set, out))
}

fn default_checkpoints(set: &RunSet, basis: Basis) -> Vec<usize> {
    let mut v: Vec<usize> = set
        .records
        .iter()
        .map(|r| match basis {
            Basis::Epochs => r.total_epochs,
            Basis::Iterations => r.total_epochs * r.iterations_per_epoch,
        })
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn analyze(cmd: &AnalyzeCommand) -> Result<Outcome> {
    match cmd {
        AnalyzeCommand::Targets(s) => {
            let (set, out) = load(s)?;
            let targets = analysis::select_targets(&set)?;
            analysis::write_targets(&out, &targets)?;
            println!("boundary rule: {}", analysis::BOUNDARY_RULE);
            for t in &targets {
                println!("stage {} {} {}  [{}]", t.stage_index, t.metric.name(), t.value, t.provenance);
            }
        }
        AnalyzeCommand::Speedup { study, reference_batch } => {
            let (set, out) = load(study)?;
            let targets = analysis::select_targets(&set)?;
            let m0 = match reference_batch {
                Some(m) => *m,
                None => *set
                    .batch_sizes()
                    .first()
                    .ok_or_else(|| Error::Study("study has no runs".into()))?,
            };
            let report = analysis::speedup_report(&set, &targets, m0)?;
            for p in analysis::write_speedup(&out, &report)? {
                println!("wrote {}", p.display());
            }
        }
        AnalyzeCommand::Heatmap { study, batch, metric } => {
            let (set, out) = load(study)?;
            let metric = metric.map(Metric::from).unwrap_or_else(|| analysis::default_metric(&set));
            let batches = if batch.is_empty() { set.batch_sizes() } else { batch.clone() };
            for b in batches {
                let maps = analysis::heatmap(&set, b, metric)?;
                println!("wrote {}", analysis::write_heatmap(&out, &maps)?.display());
            }
        }
        AnalyzeCommand::Robustness { study, basis, checkpoints, metric } => {
            let (set, out) = load(study)?;
            let metric = metric.map(Metric::from).unwrap_or_else(|| analysis::default_metric(&set));
            let bases: &[Basis] = match basis {
                BasisArg::Epochs => &[Basis::Epochs],
                BasisArg::Iterations => &[Basis::Iterations],
                BasisArg::Both => &[Basis::Epochs, Basis::Iterations],
            };
            for &b in bases {
                let cps = if checkpoints.is_empty() {
                    default_checkpoints(&set, b)
                } else {
                    checkpoints.clone()
                };
                let summary = analysis::robustness(&set, &cps, b, metric)?;
                println!("wrote {}", analysis::write_robustness(&out, &summary)?.display());
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::GenerateData(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Grid(a) => grid(a),
        Command::Analyze(c) => analyze(c),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
