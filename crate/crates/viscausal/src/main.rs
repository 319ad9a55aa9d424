use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use viscausal::backends::AnyBackend;
use viscausal::dataset::{dataset_stats, load_dataset, DatasetRecord, LoadReport};
use viscausal::eval::{evaluate, sweep, EvalOptions, PredictionSet};
use viscausal::runner::{run, RunConfig};
use viscausal::service::{serve, ServiceConfig, ServiceState};
use viscausal_core::assignment::Gating;
use viscausal_core::metrics::{default_thresholds, AggregationMode};
use viscausal_core::reward::{RewardConfig, RewardWeights};
use viscausal_core::search::{LeafValue, SearchParams};

#[derive(Parser)]
#[command(name = "viscausal", version, about = "Visual causal discovery: evaluation, trajectory search and reward service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against ground truth at one GIoU threshold.
    Evaluate(EvalArgs),
    /// Recall across a threshold grid, with the recall stability index.
    Sweep(SweepArgs),
    /// Tree search plus one-step baseline per image; exports kept trajectories.
    Search(SearchArgs),
    /// Dataset statistics and validation report.
    Stats(StatsArgs),
    /// Run the HTTP reward service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Macro,
    Micro,
}

impl From<Mode> for AggregationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Macro => AggregationMode::Macro,
            Mode::Micro => AggregationMode::Micro,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GatingArg {
    /// Assign first, then drop pairs under the threshold.
    Post,
    /// Exclude sub-threshold pairs before assigning.
    Pre,
}

impl From<GatingArg> for Gating {
    fn from(g: GatingArg) -> Self {
        match g {
            GatingArg::Post => Gating::PostAssignment,
            GatingArg::Pre => Gating::PreMask,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LeafArg {
    Recall,
    Reward,
}

#[derive(Args)]
struct CommonEval {
    /// Predictions: dataset-schema records or {"img_id", "text"} lines.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth dataset.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "macro")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "post")]
    gating: GatingArg,
    /// Worker threads; 0 for all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Directory for per_image.jsonl, summary.json and validation.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; evaluation is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonEval,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonEval,
    /// Comma-separated GIoU thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// JSON backend config ({"kind": "scripted" | "http", ...}).
    #[arg(long)]
    backend_config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    iterations: u32,
    #[arg(long, default_value_t = 10)]
    branching: u32,
    #[arg(long, default_value_t = 12)]
    step_limit: u32,
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    uct_w: f64,
    /// GIoU threshold used when valuing states.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value = "recall")]
    leaf_value: LeafArg,
    /// λr,λp,λf for `--leaf-value reward`.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Directory holding `<img_id>.<ext>` images.
    #[arg(long)]
    image_dir: Option<PathBuf>,
    #[arg(long, default_value = "jpg")]
    image_ext: String,
    /// Send the full image for entity recognition instead of the focus crop.
    #[arg(long)]
    full_image_entities: bool,
    #[arg(long, default_value_t = 2048)]
    max_tokens: u32,
    /// Write each search tree to trees/<img_id>.json.
    #[arg(long)]
    dump_trees: bool,
    /// Process at most this many images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Write the validation report here (line-delimited).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print statistics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Default λr,λp,λf.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1024)]
    batch_cap: usize,
    #[arg(long, default_value_t = 8 << 20)]
    max_body_bytes: usize,
    /// Environment variable holding a bearer token to require.
    #[arg(long)]
    token_env: Option<String>,
}

fn weights(raw: Option<&[f64]>) -> Result<RewardWeights> {
    match raw {
        None => Ok(RewardWeights::default()),
        Some([r, p, f]) => Ok(RewardWeights::new(*r, *p, *f)?),
        Some(_) => bail!("--weights takes three comma-separated values"),
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        bail!("threshold {t} must lie in [0, 1]");
    }
    Ok(())
}

fn load_gt(path: &Path, report_dir: Option<&Path>) -> Result<LoadReport> {
    let report = load_dataset(path)?;
    let errors = report.errors().count();
    if errors > 0 {
        log::warn!("{}: {errors} record errors; affected records skipped", path.display());
    }
    if let Some(dir) = report_dir {
        report.write_report(fs::File::create(dir.join("validation.jsonl"))?)?;
    }
    if report.records.is_empty() && report.total > 0 {
        bail!("{}: no valid records", path.display());
    }
    Ok(report)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn load_pair(c: &CommonEval) -> Result<(PredictionSet, Vec<DatasetRecord>)> {
    if let Some(out) = &c.out {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    }
    let gt = load_gt(&c.gt, c.out.as_deref())?;
    let preds = PredictionSet::load(&c.pred)?;
    for p in &preds.problems {
        log::warn!("{}: {p}", c.pred.display());
    }
    Ok((preds, gt.records))
}

fn write_outputs(out: Option<&Path>, per_image: &str, summary: &str) -> Result<()> {
    if let Some(out) = out {
        fs::write(out.join("per_image.jsonl"), per_image)?;
        fs::write(out.join("summary.json"), format!("{summary}\n"))?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let (preds, gt) = load_pair(&a.common)?;
    let options = EvalOptions { threshold: a.threshold, mode: a.common.mode.into(), gating: a.common.gating.into() };
    let report = pool(a.common.jobs)?.install(|| evaluate(&preds, &gt, options));
    write_outputs(a.common.out.as_deref(), &report.per_image_jsonl(), &report.summary_json())?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let thresholds = a.thresholds.unwrap_or_else(default_thresholds);
    if thresholds.is_empty() {
        bail!("--thresholds is empty");
    }
    thresholds.iter().try_for_each(|t| check_threshold(*t))?;
    let (preds, gt) = load_pair(&a.common)?;
    let result = pool(a.common.jobs)?.install(|| sweep(&preds, &gt, &thresholds, a.common.mode.into(), a.common.gating.into()));
    write_outputs(a.common.out.as_deref(), &result.per_image_jsonl(), &result.summary_json())?;
    print!("{}", result.table());
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut records = load_gt(&a.dataset, Some(&a.out))?.records;
    records.sort_by_key(|r| r.img_id);
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    let backend = AnyBackend::load(&a.backend_config)?;
    let leaf_value = match a.leaf_value {
        LeafArg::Recall => LeafValue::Recall,
        LeafArg::Reward => LeafValue::Reward { weights: weights(a.weights.as_deref())? },
    };
    let params = SearchParams {
        step_limit: a.step_limit,
        branching: a.branching,
        iterations: a.iterations,
        exploration_weight: a.uct_w,
        threshold: a.threshold,
        crop_entities: !a.full_image_entities,
        leaf_value,
        seed: a.seed,
        max_tokens: a.max_tokens,
        ..SearchParams::default()
    };
    let config = RunConfig {
        params,
        out_dir: a.out.clone(),
        jobs: a.jobs,
        image_dir: a.image_dir,
        image_ext: a.image_ext,
        dump_trees: a.dump_trees,
    };
    let summary = run(&backend, &records, &config)?;
    print!("{}", summary.table());
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let report = load_dataset(&a.dataset)?;
    if let Some(path) = &a.report {
        report.write_report(fs::File::create(path)?)?;
    }
    let stats = dataset_stats(&report.records, a.top_k);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{stats}");
        let errors = report.errors().count();
        println!("validation: {} records read, {} errors, {} warnings", report.total, errors, report.violations.len() - errors);
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let token = match &a.token_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
        None => None,
    };
    let config = ServiceConfig {
        defaults: RewardConfig::with_weights(weights(a.weights.as_deref())?, a.threshold),
        batch_cap: a.batch_cap,
        max_body_bytes: a.max_body_bytes,
        token,
    };
    let state = ServiceState::loading(config);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("cannot bind {}:{}", a.host, a.port))?;
        log::info!("listening on {}", listener.local_addr()?);
        state.load_in_background(a.dataset.clone());
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Search(a) => cmd_search(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
