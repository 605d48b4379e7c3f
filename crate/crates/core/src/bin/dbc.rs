use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dbc::embed::{alternate, default_validation, LrSchedule, TrainConfig, DEFAULT_MOMENTUM, DEFAULT_TEMPERATURE};
use dbc::eval::{evaluate, RetrievalProtocol};
use dbc::experiments::{
    ablation, bench_scaling, dedup_lambdas, loglog_slope, render_ablation, sweep_lambda, Pipeline,
};
use dbc::io::{
    attach_labels, read_features, read_label_tsv, write_assignments, write_csv, write_dbcf, write_json, write_jsonl,
    write_label_tsv, FeatureFormat,
};
use dbc::{
    cluster, pairwise_distances, Criterion, EngineConfig, Error, FeatureStore, IntraMode, Result, StopRule,
    SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "dbc", version, about = "Dispersion-based agglomerative clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster fixed features to the stop rule.
    Cluster(ClusterArgs),
    /// Alternate embedding refinement and clustering stages.
    Alternate(AlternateArgs),
    /// Compare the four merge criteria under one configuration.
    Ablate(ExperimentArgs),
    /// Run the dispersion criterion for each λ in a list.
    SweepLambda(SweepArgs),
    /// Time one clustering stage on synthetic data of growing size.
    BenchScaling(ScalingArgs),
    /// Write a synthetic long-tail benchmark as CSV plus a label sidecar.
    Generate(GenerateArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Feature file.
    #[arg(long)]
    input: PathBuf,
    /// Feature file format.
    #[arg(long, default_value = "csv")]
    format: FeatureFormat,
    /// Optional `id<TAB>label` ground-truth sidecar.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long, default_value = "dispersion")]
    criterion: String,
    #[arg(long, default_value_t = dbc::engine::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = dbc::engine::DEFAULT_MERGE_PERCENT)]
    merge_percent: f64,
    #[arg(long, value_enum, default_value = "paper")]
    intra_mode: IntraArg,
    /// Stop once this many clusters remain; otherwise merge while more
    /// clusters than one stage's merges remain.
    #[arg(long)]
    target_clusters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Training epochs per stage.
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Epoch at which the learning rate drops by ten [default: 15, or no
    /// decay when fewer epochs run].
    #[arg(long)]
    lr_decay_epoch: Option<usize>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = DEFAULT_MOMENTUM)]
    momentum: f64,
    /// Maximum number of stages.
    #[arg(long)]
    stages: Option<usize>,
}

const DEFAULT_DECAY_EPOCH: usize = 15;

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct AlternateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Cluster fixed features, or alternate with training.
    #[arg(long, value_enum, default_value = "alternate")]
    pipeline: PipelineArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.5,1,2")]
    lambdas: Vec<f64>,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Comma-separated ascending sample counts.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
    sizes: Vec<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Within-identity standard deviation.
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntraArg {
    Paper,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Cluster,
    Alternate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Cluster(a) => cmd_cluster(a),
        Command::Alternate(a) => cmd_alternate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::SweepLambda(a) => cmd_sweep(a),
        Command::BenchScaling(a) => cmd_bench(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DBC_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::config(format!("DBC_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config(format!("cannot size the worker pool: {e}")))
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.merge_percent > 0.0 && self.merge_percent < 1.0) {
            return Err(Error::config(format!(
                "merge percent must lie in (0, 1), got {}",
                self.merge_percent
            )));
        }
        let criterion = Criterion::from_name(&self.criterion, self.lambda)?;
        let stop = match self.target_clusters {
            Some(0) => return Err(Error::config("target clusters must be at least 1")),
            Some(t) => StopRule::MinClusters(t),
            None => StopRule::PaperLoop,
        };
        let mode = match self.intra_mode {
            IntraArg::Paper => IntraMode::PaperEq7,
            IntraArg::Exact => IntraMode::Exact,
        };
        Ok(EngineConfig::default()
            .with_criterion(criterion)
            .with_merge_percent(self.merge_percent)
            .with_intra_mode(mode)
            .with_stop(stop))
    }
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            lr: LrSchedule {
                initial: self.lr,
                decay_epoch: self.lr_decay_epoch.unwrap_or(DEFAULT_DECAY_EPOCH.min(self.epochs)),
                decayed: self.lr * 0.1,
            },
            batch_size: self.batch_size,
            temperature: self.temperature,
            momentum: self.momentum,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl InputArgs {
    fn check_paths(&self) -> Result<()> {
        for path in std::iter::once(&self.input).chain(self.labels.as_ref()) {
            if !path.is_file() {
                return Err(Error::config(format!("{}: no such file", path.display())));
            }
        }
        prepare_out(&self.out)
    }

    fn load(&self) -> Result<FeatureStore> {
        let store = read_features(&self.input, self.format)?;
        match &self.labels {
            Some(path) => attach_labels(store, &read_label_tsv(path)?),
            None => Ok(store),
        }
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn check_size(config: &EngineConfig, store: &FeatureStore) -> Result<()> {
    config.merges_per_stage(store.len()).map(|_| ())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let config = a.engine.config()?;
    a.input.check_paths()?;
    let store = a.input.load()?;
    check_size(&config, &store)?;
    let dist = pairwise_distances(&store)?;
    let run = cluster(&dist, &config)?;
    let out = &a.input.out;
    write_assignments(&out.join("labels.tsv"), store.sample_ids(), run.state.labels())?;
    write_jsonl(&out.join("merges.jsonl"), &run.events)?;
    if let Some(truth) = store.ground_truth() {
        let protocol = RetrievalProtocol::one_query_per_identity(truth)?;
        let report = evaluate(&store, &protocol, run.state.labels())?;
        write_json(&out.join("metrics.json"), &report)?;
    }
    println!(
        "{} samples -> {} clusters in {} stages",
        store.len(),
        run.state.num_clusters(),
        run.stages
    );
    Ok(())
}

fn cmd_alternate(a: AlternateArgs) -> Result<()> {
    let config = a.engine.config()?;
    let train = a.train.config(a.engine.seed)?;
    a.input.check_paths()?;
    let store = a.input.load()?;
    check_size(&config, &store)?;
    let result = alternate(&store, &config, &train, a.train.stages, &mut default_validation)?;
    let out = &a.input.out;
    write_assignments(&out.join("labels.tsv"), store.sample_ids(), result.best_state.labels())?;
    write_jsonl(&out.join("merges.jsonl"), &result.events)?;
    write_json(&out.join("history.json"), &result.history)?;
    write_dbcf(&out.join("features.dbcf"), &result.best_store)?;
    if let Some(truth) = store.ground_truth() {
        let protocol = RetrievalProtocol::one_query_per_identity(truth)?;
        let report = evaluate(&result.best_store, &protocol, result.best_state.labels())?;
        write_json(&out.join("metrics.json"), &report)?;
    }
    match result.best_stage {
        Some(s) => println!(
            "{} stages run; best stage {s} with {} clusters",
            result.history.len(),
            result.best_state.num_clusters()
        ),
        None => println!("no stages run"),
    }
    Ok(())
}

impl ExperimentArgs {
    /// Validate, load, and default the stop rule to the identity count.
    fn prepare(&self) -> Result<(FeatureStore, EngineConfig, Pipeline)> {
        let mut config = self.engine.config()?;
        let pipeline = match self.pipeline {
            PipelineArg::Cluster => Pipeline::ClusterOnly,
            PipelineArg::Alternate => Pipeline::Alternate {
                train: self.train.config(self.engine.seed)?,
                max_stages: self.train.stages,
            },
        };
        self.input.check_paths()?;
        let store = self.input.load()?;
        let truth = store
            .ground_truth()
            .ok_or_else(|| Error::config("this command needs ground-truth labels"))?;
        if self.engine.target_clusters.is_none() {
            let identities = truth.iter().collect::<BTreeSet<_>>().len();
            config = config.with_stop(StopRule::MinClusters(identities));
        }
        check_size(&config, &store)?;
        Ok((store, config, pipeline))
    }
}

fn cmd_ablate(a: ExperimentArgs) -> Result<()> {
    let (store, config, pipeline) = a.prepare()?;
    let rows = ablation(&store, &config, a.engine.lambda, &pipeline)?;
    let table = render_ablation(&rows);
    write_json(&a.input.out.join("ablation.json"), &rows)?;
    std::fs::write(a.input.out.join("ablation.txt"), &table)
        .map_err(|e| Error::io(format!("writing {}", a.input.out.join("ablation.txt").display()), e))?;
    print!("{table}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    if a.lambdas.is_empty() {
        return Err(Error::config("lambda list is empty"));
    }
    if let Some(bad) = a.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::config(format!("lambda must be finite and >= 0, got {bad}")));
    }
    let (lambdas, dropped) = dedup_lambdas(&a.lambdas);
    for l in dropped {
        log::warn!("duplicate lambda {l} ignored");
    }
    let (store, config, pipeline) = a.experiment.prepare()?;
    let rows = sweep_lambda(&store, &config, &lambdas, &pipeline)?;
    let path = a.experiment.input.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    for r in &rows {
        println!("lambda {:<6} rank1 {:.4} mAP {:.4} F1 {:.4}", r.lambda, r.rank1, r.map, r.f1);
    }
    Ok(())
}

fn cmd_bench(a: ScalingArgs) -> Result<()> {
    let config = a.engine.config()?;
    prepare_out(&a.out)?;
    let rows = bench_scaling(&a.sizes, &config, a.engine.seed)?;
    let slope = loglog_slope(&rows);
    let path = a.out.join("scaling.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    for r in &rows {
        println!("N {:>7}  {:>10.1} ms", r.n, r.wall_ms);
    }
    if let Some(s) = slope {
        println!("log-log slope {s:.3}");
        write_json(&a.out.join("scaling_slope.json"), &serde_json::json!({ "slope": s }))?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = SyntheticSpec::standard_benchmark(a.seed);
    if let Some(spread) = a.spread {
        spec.cluster_spread = spread;
    }
    prepare_out(&a.out)?;
    let store = dbc::generate_synthetic(&spec)?;
    let truth = store.ground_truth().expect("synthetic data is labelled").to_vec();
    let unlabelled = FeatureStore::new(store.as_slice().to_vec(), store.dim(), store.sample_ids().to_vec())?;
    write_csv(&a.out.join("features.csv"), &unlabelled)?;
    write_label_tsv(&a.out.join("truth.tsv"), store.sample_ids(), &truth)?;
    println!("{} samples, {} identities", store.len(), spec.num_identities);
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(format!("writing {}", path.display()), std::io::Error::other(e))
}
