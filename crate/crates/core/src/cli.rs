//! Command-line interface: `generate`, `calibrate`, `simulate`, `frontier`,
//! `delegation-gain` and `serve`.
//!
//! Every artifact-producing command writes a `manifest.json` next to its
//! outputs. Numeric results are CSV or JSON only. Exit codes: 0 success,
//! 1 runtime failure, 2 usage error.
//!
//! Manifest timestamps honor `SOURCE_DATE_EPOCH`, so seeded commands can be
//! made byte-for-byte reproducible including the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tracing::info;

use crate::calibration::{
    fit_platt, repeated_protocol, repetition_rng, CalibrationReport, ProtocolOptions,
    DEFAULT_L2_LAMBDA,
};
use crate::chain::{delegation_gain, estimate_performance, CostKind, ErrorMode, ScoredChain};
use crate::config::ChainFile;
use crate::error::{Error, Result};
use crate::frontier::{
    bucket_curves, build_grid, single_model_baseline, write_baselines_csv, write_curves_csv,
    write_frontier_csv, FrontierEngine, FrontierOptions, DEFAULT_MAX_CONFIGS, DEFAULT_RESOLUTION,
};
use crate::math::quantile_sorted;
use crate::records::{
    generate_synthetic, load_dataset, save_dataset, DataFormat, Dataset, SyntheticModel,
    SyntheticSpec, DEFAULT_NOISE_SD, DEFAULT_SHARPNESS,
};
use crate::router::{EndpointSpec, OpenAiBackend, ReplayBackend, RequestMode, Router};
use crate::transforms::TransformKind;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hcma",
    version,
    about = "Calibrated model chains with multi-level abstention"
)]
pub struct Cli {
    /// Worker threads for parallel sweeps (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset with shared per-query difficulty.
    Generate(GenerateArgs),
    /// Run the repeated small-sample calibration protocol and export a calibrator.
    Calibrate(CalibrateArgs),
    /// Evaluate one chain configuration.
    Simulate(SimulateArgs),
    /// Sweep chain thresholds and export the Pareto frontier.
    Frontier(FrontierArgs),
    /// Error change from delegating on a quantile rule versus random delegation.
    DelegationGain(DelegationGainArgs),
    /// Run the HTTP router.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Raw,
    Msp,
    Ptrue,
}

impl From<TransformArg> for TransformKind {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Raw => TransformKind::Identity,
            TransformArg::Msp => TransformKind::MaxSoftmax,
            TransformArg::Ptrue => TransformKind::PTrue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorModeArg {
    Plugin,
    Empirical,
}

impl From<ErrorModeArg> for ErrorMode {
    fn from(m: ErrorModeArg) -> Self {
        match m {
            ErrorModeArg::Plugin => ErrorMode::Plugin,
            ErrorModeArg::Empirical => ErrorMode::Empirical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostKindArg {
    Dollars,
    Latency,
}

impl From<CostKindArg> for CostKind {
    fn from(c: CostKindArg) -> Self {
        match c {
            CostKindArg::Dollars => CostKind::Dollars,
            CostKindArg::Latency => CostKind::Latency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1530)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; a `<file>.manifest.json` is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the output extension.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_delimiter = ',', default_values_t = ["small".to_string(), "medium".into(), "large".into()])]
    pub model_ids: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.5, 2.5])]
    pub skills: Vec<f64>,
    /// One value for all models, or one per model.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_SHARPNESS])]
    pub sharpness: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_NOISE_SD)]
    pub noise_sd: f64,
    /// Per-model latency in milliseconds.
    #[arg(long, value_delimiter = ',')]
    pub latency_ms: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model_id: String,
    #[arg(long, value_enum, default_value_t = TransformArg::Msp)]
    pub transform: TransformArg,
    #[arg(long, default_value_t = 50)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_L2_LAMBDA)]
    pub l2_lambda: f64,
    /// Fit the exported calibrator on every record instead of one `n_train` draw.
    #[arg(long)]
    pub fit_all: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = ErrorModeArg::Plugin)]
    pub error_mode: ErrorModeArg,
    /// Overrides the config file.
    #[arg(long, value_enum)]
    pub cost_kind: Option<CostKindArg>,
    /// Overrides `r_1..r_k` from the config file.
    #[arg(long, value_delimiter = ',')]
    pub reject: Option<Vec<f64>>,
    /// Overrides `a_1..a_{k-1}` from the config file.
    #[arg(long, value_delimiter = ',')]
    pub accept: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct FrontierArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Chain members, costs and calibrators; thresholds are ignored.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: f64,
    /// Only the last member may reject.
    #[arg(long)]
    pub no_early_abstention: bool,
    #[arg(long, value_enum, default_value_t = ErrorModeArg::Plugin)]
    pub error_mode: ErrorModeArg,
    #[arg(long, value_enum)]
    pub cost_kind: Option<CostKindArg>,
    /// Cost bucket edges; default is ten equal buckets up to the largest frontier cost.
    #[arg(long, value_delimiter = ',')]
    pub bucket_edges: Option<Vec<f64>>,
    /// Abstention sub-bin width for bucket and baseline curves.
    #[arg(long, default_value_t = 0.025)]
    pub abstention_bin: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_CONFIGS)]
    pub max_configs: u64,
    /// Write one configuration per distinct frontier point.
    #[arg(long)]
    pub dedupe: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DelegationGainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the dataset's first model.
    #[arg(long)]
    pub small: Option<String>,
    /// Defaults to the dataset's second model.
    #[arg(long)]
    pub large: Option<String>,
    /// Delegate when the small model's score is below this quantile of its scores.
    #[arg(long, default_value_t = 0.5)]
    pub quantile: f64,
    /// Score with the small model's calibrator from this chain config instead of raw probabilities.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Serve recorded raw probabilities from this dataset instead of calling providers.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to command outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub dataset_sha256: Option<String>,
    pub config_sha256: Option<String>,
    pub parameters: serde_json::Value,
    pub outputs: Vec<OutputFile>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    fn start(command: &str, seed: Option<u64>, parameters: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            dataset_sha256: None,
            config_sha256: None,
            parameters,
            outputs: Vec::new(),
            started_at: timestamp(),
            finished_at: String::new(),
        }
    }

    fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(OutputFile {
            path: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = timestamp();
        std::fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|s| DateTime::from_timestamp(s, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn load(path: &Path) -> Result<Dataset> {
    require_file(path, "dataset")?;
    load_dataset(path, DataFormat::from_path(path))
}

fn load_chain(path: &Path) -> Result<ChainFile> {
    require_file(path, "config")?;
    ChainFile::load(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let k = args.model_ids.len();
    if args.skills.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} skills given for {k} models",
            args.skills.len()
        )));
    }
    let per_model = |values: &[f64], name: &str| -> Result<Vec<Option<f64>>> {
        match values.len() {
            0 => Ok(vec![None; k]),
            1 => Ok(vec![Some(values[0]); k]),
            l if l == k => Ok(values.iter().copied().map(Some).collect()),
            l => Err(Error::InvalidArgument(format!(
                "{l} {name} values given for {k} models"
            ))),
        }
    };
    let sharpness = per_model(&args.sharpness, "sharpness")?;
    let latency = per_model(&args.latency_ms, "latency")?;
    let spec = SyntheticSpec {
        n: args.n,
        models: (0..k)
            .map(|j| SyntheticModel {
                model_id: args.model_ids[j].clone(),
                skill: args.skills[j],
                sharpness: sharpness[j].unwrap_or(DEFAULT_SHARPNESS),
                latency_ms: latency[j],
            })
            .collect(),
        noise_sd: args.noise_sd,
        seed: args.seed,
    };
    let mut manifest =
        RunManifest::start("generate", Some(args.seed), serde_json::to_value(&spec)?);
    let dataset = generate_synthetic(&spec)?;
    let format = match args.format {
        Some(FormatArg::Jsonl) => DataFormat::Jsonl,
        Some(FormatArg::Csv) => DataFormat::Csv,
        None => DataFormat::from_path(&args.out),
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_dataset(&dataset, &args.out, format)?;
    manifest.add_output(&args.out)?;
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    manifest.finish(Path::new(&manifest_path))?;
    info!(records = dataset.len(), path = %args.out.display(), "dataset written");
    Ok(())
}

/// Runs the protocol, writes `report.json`, `metrics.csv`, `repetitions.csv`,
/// `calibrator_<model>.json` and `manifest.json` into `out`.
pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<CalibrationReport> {
    let dataset = load(&args.dataset)?;
    let transform = TransformKind::from(args.transform);
    let mut manifest = RunManifest::start(
        "calibrate",
        Some(args.seed),
        json!({
            "model_id": args.model_id,
            "transform": transform,
            "n_train": args.n_train,
            "n_reps": args.n_reps,
            "l2_lambda": args.l2_lambda,
            "fit_all": args.fit_all,
        }),
    );
    manifest.dataset_sha256 = Some(sha256_file(&args.dataset)?);
    let options = ProtocolOptions {
        l2_lambda: args.l2_lambda,
        ..ProtocolOptions::default()
    };
    let report = repeated_protocol(
        &dataset,
        &args.model_id,
        transform,
        args.n_train,
        args.n_reps,
        args.seed,
        &options,
    )?;

    let pairs = dataset.pairs(&args.model_id)?;
    let train: Vec<(f64, bool)> = if args.fit_all {
        pairs
    } else {
        // Same draw as repetition 0 of the protocol.
        let mut rng = repetition_rng(args.seed, 0);
        rand::seq::index::sample(&mut rng, pairs.len(), args.n_train)
            .into_iter()
            .map(|i| pairs[i])
            .collect()
    };
    let calibrator = fit_platt(&train, transform, args.l2_lambda)?.with_model_id(&args.model_id);

    std::fs::create_dir_all(&args.out)?;
    let cal_path = args.out.join(format!("calibrator_{}.json", args.model_id));
    calibrator.save(&cal_path)?;
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;

    let metrics_path = args.out.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    writeln!(
        w,
        "model_id,transform,n_train,n_reps,precision,f1,accuracy,ece"
    )?;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{}",
        report.model_id,
        transform.cli_name(),
        report.n_train,
        report.n_reps,
        report.precision,
        report.f1,
        report.accuracy,
        report.ece
    )?;
    w.flush()?;

    let reps_path = args.out.join("repetitions.csv");
    let mut w = create(&reps_path)?;
    writeln!(w, "rep,precision,f1,accuracy,ece,weight,intercept")?;
    for (i, r) in report.repetitions.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{},{}",
            r.precision, r.f1, r.accuracy, r.ece, r.weight, r.intercept
        )?;
    }
    w.flush()?;

    for p in [&cal_path, &report_path, &metrics_path, &reps_path] {
        manifest.add_output(p)?;
    }
    manifest.finish(&args.out.join("manifest.json"))?;
    info!(
        ece = report.ece,
        f1 = report.f1,
        "calibration protocol finished"
    );
    Ok(report)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<serde_json::Value> {
    let dataset = load(&args.dataset)?;
    let file = load_chain(&args.config)?;
    let mut config = file.chain_config()?;
    if args.reject.is_some() || args.accept.is_some() {
        let reject = args
            .reject
            .clone()
            .unwrap_or_else(|| config.reject_thresholds().to_vec());
        let accept = args
            .accept
            .clone()
            .unwrap_or_else(|| config.accept_thresholds()[..config.len() - 1].to_vec());
        config = config.with_thresholds(reject, accept)?;
    }
    let cost_kind = args.cost_kind.map(CostKind::from).unwrap_or(file.cost_kind);
    let error_mode = ErrorMode::from(args.error_mode);
    let point = estimate_performance(&config, &dataset, error_mode, cost_kind)?;
    Ok(json!({
        "error": point.error,
        "abstention": point.abstention,
        "expected_cost": point.expected_cost,
        "error_mode": error_mode,
        "cost_kind": cost_kind,
        "n": dataset.len(),
    }))
}

/// Writes `frontier.csv`, `curves.csv`, `baselines.csv`, `summary.json` and
/// `manifest.json` into `out`.
pub fn cmd_frontier(args: &FrontierArgs) -> Result<serde_json::Value> {
    let dataset = load(&args.dataset)?;
    let file = load_chain(&args.config)?;
    let members = file.profiles()?;
    let cost_kind = args.cost_kind.map(CostKind::from).unwrap_or(file.cost_kind);
    let error_mode = ErrorMode::from(args.error_mode);
    let mut manifest = RunManifest::start(
        "frontier",
        None,
        json!({
            "resolution": args.resolution,
            "early_abstention": !args.no_early_abstention,
            "error_mode": error_mode,
            "cost_kind": cost_kind,
            "bucket_edges": args.bucket_edges,
            "abstention_bin": args.abstention_bin,
            "dedupe": args.dedupe,
        }),
    );
    manifest.dataset_sha256 = Some(sha256_file(&args.dataset)?);
    manifest.config_sha256 = Some(sha256_file(&args.config)?);

    let scored = ScoredChain::build(&members, &dataset, cost_kind)?;
    let grid = build_grid(&scored, args.resolution)?;
    let options = FrontierOptions {
        early_abstention: !args.no_early_abstention,
        error_mode,
        max_configs: args.max_configs,
    };
    let mut frontier = FrontierEngine::new(&scored, &grid, error_mode)?.enumerate(&options)?;
    if args.dedupe {
        frontier = frontier.dedup();
    }
    info!(
        configs = frontier.configs_enumerated,
        frontier = frontier.points.len(),
        wall_time_ms = frontier.wall_time_ms,
        "sweep finished"
    );

    let edges = match &args.bucket_edges {
        Some(e) => e.clone(),
        None => {
            let max = frontier
                .points
                .iter()
                .map(|p| p.point.expected_cost)
                .fold(0.0, f64::max)
                .next_up();
            (0..=10).map(|i| max * i as f64 / 10.0).collect()
        }
    };
    let buckets = bucket_curves(&frontier, &edges, args.abstention_bin)?;
    let baselines = members
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let single = ScoredChain::build(std::slice::from_ref(m), &dataset, cost_kind)?;
            Ok((
                m.model_id.clone(),
                single_model_baseline(&single, &grid.levels[j], error_mode)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    std::fs::create_dir_all(&args.out)?;
    let frontier_path = args.out.join("frontier.csv");
    let mut w = create(&frontier_path)?;
    write_frontier_csv(&frontier, &mut w)?;
    w.flush()?;
    let curves_path = args.out.join("curves.csv");
    let mut w = create(&curves_path)?;
    write_curves_csv(&buckets, &mut w)?;
    w.flush()?;
    let baselines_path = args.out.join("baselines.csv");
    let mut w = create(&baselines_path)?;
    write_baselines_csv(&baselines, &mut w)?;
    w.flush()?;

    let summary = json!({
        "members": members.iter().map(|m| m.model_id.clone()).collect::<Vec<_>>(),
        "records": dataset.len(),
        "resolution": args.resolution,
        "grid_sizes": grid.levels.iter().map(Vec::len).collect::<Vec<_>>(),
        "configs_enumerated": frontier.configs_enumerated,
        "frontier_size": frontier.points.len(),
        "dominated_count": frontier.dominated_count,
        "early_abstention": frontier.early_abstention,
        "error_mode": error_mode,
        "cost_kind": cost_kind,
        "bucket_edges": edges,
    });
    let summary_path = args.out.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;

    for p in [&frontier_path, &curves_path, &baselines_path, &summary_path] {
        manifest.add_output(p)?;
    }
    manifest.finish(&args.out.join("manifest.json"))?;
    Ok(summary)
}

pub fn cmd_delegation_gain(args: &DelegationGainArgs) -> Result<serde_json::Value> {
    if !(0.0..=1.0).contains(&args.quantile) {
        return Err(Error::InvalidArgument(format!(
            "quantile must be in [0, 1], got {}",
            args.quantile
        )));
    }
    let dataset = load(&args.dataset)?;
    let ids = dataset.model_ids();
    let pick = |given: &Option<String>, i: usize, role: &str| -> Result<String> {
        given
            .clone()
            .or_else(|| ids.get(i).cloned())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("dataset has no model to use as the {role} model"))
            })
    };
    let small = pick(&args.small, 0, "small")?;
    let large = pick(&args.large, 1, "large")?;
    let calibrator = match &args.config {
        Some(path) => {
            let profiles = load_chain(path)?.profiles()?;
            let profile = profiles
                .into_iter()
                .find(|p| p.model_id == small)
                .ok_or_else(|| Error::Config(format!("config has no member `{small}`")))?;
            Some(profile.calibrator()?.clone())
        }
        None => None,
    };
    let mut scores = Vec::with_capacity(dataset.len());
    let mut err_small = Vec::with_capacity(dataset.len());
    let mut err_large = Vec::with_capacity(dataset.len());
    for record in dataset.records() {
        let s = record.entry(&small)?;
        let l = record.entry(&large)?;
        scores.push(match &calibrator {
            Some(c) => c.predict(s.raw_prob)?,
            None => s.raw_prob,
        });
        err_small.push(!s.correct);
        err_large.push(!l.correct);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&sorted, args.quantile);
    let delegate: Vec<bool> = scores.iter().map(|&s| s < threshold).collect();
    let gain = delegation_gain(&delegate, &err_small, &err_large)?;
    Ok(json!({
        "small": small,
        "large": large,
        "quantile": args.quantile,
        "threshold": threshold,
        "score": if calibrator.is_some() { "calibrated" } else { "raw" },
        "delegation_rate": delegate.iter().filter(|&&d| d).count() as f64 / delegate.len() as f64,
        "delta_e": gain.delta_e,
        "cov_small": gain.cov_small,
        "cov_large": gain.cov_large,
    }))
}

/// Builds the router described by a config file.
pub fn build_router(config_path: &Path, replay: Option<&Path>) -> Result<Router> {
    let file = load_chain(config_path)?;
    let config = file.chain_config()?;
    match replay {
        Some(path) => {
            let dataset = load(path)?;
            Router::new(
                config,
                replay_endpoints(&file),
                Arc::new(ReplayBackend::new(&dataset)),
                file.failure_policy,
                file.cost_kind,
            )
        }
        None => Router::new(
            config,
            file.endpoints.clone(),
            Arc::new(OpenAiBackend::new()),
            file.failure_policy,
            file.cost_kind,
        ),
    }
}

fn replay_endpoints(file: &ChainFile) -> Vec<EndpointSpec> {
    file.members
        .iter()
        .map(|m| EndpointSpec::new(&m.model_id, "replay://", RequestMode::MultipleChoice))
        .collect()
}

pub fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let router = Arc::new(build_router(&args.config, args.replay.as_deref())?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(crate::router::serve(router, args.bind))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn is_usage_error(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(_))
}

/// Parses `args` and runs the selected command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        // Fails only if a pool already exists, which keeps that pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a).and_then(|v| print_json(&v)),
        Command::Frontier(a) => cmd_frontier(a).and_then(|v| print_json(&v)),
        Command::DelegationGain(a) => cmd_delegation_gain(a).and_then(|v| print_json(&v)),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                eprintln!("run `hcma --help` for usage");
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_flags_map_to_kinds() {
        assert_eq!(
            TransformKind::from(TransformArg::Raw),
            TransformKind::Identity
        );
        assert_eq!(
            TransformKind::from(TransformArg::Msp),
            TransformKind::MaxSoftmax
        );
        assert_eq!(
            TransformKind::from(TransformArg::Ptrue),
            TransformKind::PTrue
        );
    }

    #[test]
    fn parses_frontier_flags() {
        let cli = Cli::try_parse_from([
            "hcma",
            "--threads",
            "2",
            "frontier",
            "--dataset",
            "d.jsonl",
            "--config",
            "c.toml",
            "--no-early-abstention",
            "--error-mode",
            "empirical",
            "--bucket-edges",
            "0,0.6,0.9",
            "--out",
            "o",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        let Command::Frontier(f) = cli.command else {
            panic!("wrong command")
        };
        assert!(f.no_early_abstention);
        assert_eq!(f.error_mode, ErrorModeArg::Empirical);
        assert_eq!(f.bucket_edges, Some(vec![0.0, 0.6, 0.9]));
        assert_eq!(f.resolution, 0.025);
    }

    #[test]
    fn calibrate_defaults_follow_the_protocol() {
        let cli = Cli::try_parse_from([
            "hcma",
            "calibrate",
            "--dataset",
            "d",
            "--model-id",
            "m",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Calibrate(c) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!((c.n_train, c.n_reps), (50, 100));
        assert_eq!(c.transform, TransformArg::Msp);
    }

    #[test]
    fn missing_dataset_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let args = CalibrateArgs {
            dataset: dir.path().join("nope.jsonl"),
            model_id: "m".into(),
            transform: TransformArg::Raw,
            n_train: 50,
            n_reps: 2,
            seed: 0,
            l2_lambda: DEFAULT_L2_LAMBDA,
            fit_all: false,
            out: dir.path().join("out"),
        };
        let err = cmd_calibrate(&args).unwrap_err();
        assert!(is_usage_error(&err));
    }

    #[test]
    fn source_date_epoch_pins_timestamps() {
        std::env::set_var("SOURCE_DATE_EPOCH", "0");
        assert_eq!(timestamp(), "1970-01-01T00:00:00.000Z");
        std::env::remove_var("SOURCE_DATE_EPOCH");
    }
}
