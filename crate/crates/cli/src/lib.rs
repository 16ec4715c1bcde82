//! Command-line entry points and the review service.

pub mod server;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use serde_json::json;

use curagraph::config::{ConfigError, DatasetSource, RunConfiguration};
use curagraph::dataset::{save_manifest, sidecar_path, DatasetError, GeneratorConfig};
use curagraph::engine::ChannelKind;
use curagraph::eventlog::{read_log, replay, write_log, write_snapshot, LogAppender, LogError};
use curagraph::experiment::{
    build_engine, load_dataset, prepare, run_dir, run_experiment, ExperimentError, EVENTS_FILE,
};
use curagraph::metrics::{effort_curve, score_graph, MetricsError};

#[derive(Debug, Parser)]
#[command(name = "curagraph", version, about = "Continual curation of animal identities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population and write it as a manifest.
    Generate(Common),
    /// Run a simulated curation experiment.
    Run(Common),
    /// Serve the live review queue over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
    /// Recompute metrics from a run's event log.
    Eval(Common),
    /// Rebuild graph state from an event log.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Event log; defaults to the configured run's log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    Io = 2,
    Runtime = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn kind_of_config(e: &ConfigError) -> ExitKind {
    match e {
        ConfigError::Io { .. } => ExitKind::Io,
        _ => ExitKind::Validation,
    }
}

fn kind_of_dataset(e: &DatasetError) -> ExitKind {
    match e {
        DatasetError::Io { .. } => ExitKind::Io,
        _ => ExitKind::Validation,
    }
}

fn kind_of_log(e: &LogError) -> ExitKind {
    match e {
        LogError::Io { .. } => ExitKind::Io,
        _ => ExitKind::Validation,
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(kind_of_config(&e), e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::new(kind_of_dataset(&e), e.to_string())
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        CliError::new(kind_of_log(&e), e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let kind = match &e {
            MetricsError::Io(_) => ExitKind::Io,
            MetricsError::Log(l) => kind_of_log(l),
            _ => ExitKind::Runtime,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let kind = match &e {
            ExperimentError::Config(c) => kind_of_config(c),
            ExperimentError::Dataset(d) => kind_of_dataset(d),
            ExperimentError::Log(l) => kind_of_log(l),
            ExperimentError::Model(_) => ExitKind::Validation,
            ExperimentError::Io { .. } => ExitKind::Io,
            ExperimentError::Metrics(MetricsError::Io(_)) => ExitKind::Io,
            ExperimentError::Engine(_) | ExperimentError::Metrics(_) => ExitKind::Runtime,
        };
        CliError::new(kind, e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ExitKind::Io, format!("{}: {e}", path.display()))
}

fn require_config(common: &Common) -> Result<&Path, CliError> {
    common
        .config
        .as_deref()
        .ok_or_else(|| CliError::new(ExitKind::Validation, "--config is required"))
}

/// Loads the run configuration and applies `--out` and `--seed`.
pub fn load_config(common: &Common) -> Result<RunConfiguration, CliError> {
    let mut cfg = RunConfiguration::load(require_config(common)?)?;
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// A closed pipe on stdout is not an error worth a panic.
fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Accepts either a full run configuration or a bare generator section.
pub fn generate_cmd(common: &Common) -> Result<(), CliError> {
    let path = require_config(common)?;
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::new(ExitKind::Validation, format!("{}: {e}", path.display())))?;
    let (mut gen, out_dir) = if value.get("dataset").is_some() {
        let cfg = load_config(common)?;
        match cfg.dataset {
            DatasetSource::Generate(g) => (g, cfg.output.dir),
            DatasetSource::Manifest { .. } => {
                return Err(CliError::new(
                    ExitKind::Validation,
                    "configuration reads a manifest; nothing to generate",
                ))
            }
        }
    } else {
        let g: GeneratorConfig = serde_json::from_value(value)
            .map_err(|e| CliError::new(ExitKind::Validation, format!("{}: {e}", path.display())))?;
        (g, common.out.clone().unwrap_or_else(|| PathBuf::from("out")))
    };
    if let Some(seed) = common.seed {
        gen.seed = seed;
    }
    gen.validate()?;
    let dataset = curagraph::dataset::generate(&gen)?;
    fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;
    let manifest = out_dir.join(MANIFEST_FILE);
    save_manifest(&dataset, &manifest)?;
    print_json(&json!({
        "manifest": manifest,
        "sidecar": sidecar_path(&manifest),
        "annotations": dataset.len(),
        "individuals": dataset.truth.individual_count(),
        "singleton_fraction": dataset.singleton_fraction(),
        "incomparable_pairs": dataset.truth.incomparable_pairs.len(),
    }));
    Ok(())
}

pub fn run_cmd(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let runs = run_experiment(&cfg)?;
    let summary: Vec<_> = runs
        .iter()
        .map(|(fidelity, dir, r)| {
            json!({
                "fidelity": fidelity,
                "dir": dir,
                "terminal": r.terminal,
                "human_decisions": r.human_decisions,
                "algorithmic_decisions": r.algorithmic_decisions,
                "final_gm": r.final_scores.gm,
                "cluster_count": r.final_cluster_count,
                "truth_individuals": r.truth_individuals,
            })
        })
        .collect();
    print_json(&json!(summary));
    Ok(())
}

pub fn eval_cmd(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dataset = load_dataset(&cfg)?;
    let mut summary = Vec::new();
    for fidelity in cfg.models.oracle.fidelity.values() {
        let dir = run_dir(&cfg, fidelity);
        let log_path = dir.join(EVENTS_FILE);
        let log = read_log(&log_path)?;
        if let Some(line) = log.truncated_at {
            eprintln!("warning: {} ends in a partial line {line}; ignored", log_path.display());
        }
        let curve = effort_curve(&log.records, &dataset.truth, cfg.engine.include_unidentifiable)?;
        let curve_path = dir.join("eval_curve.csv");
        curve.write_csv(fs::File::create(&curve_path).map_err(|e| io_error(&curve_path, e))?)?;
        let last = curve.final_point().copied().expect("curves are never empty");
        let entry = json!({
            "fidelity": fidelity,
            "dir": dir,
            "human_decisions": last.human_decisions,
            "final_gm": last.gm,
            "precision_frac": last.precision_frac,
            "recall_frac": last.recall_frac,
            "cluster_count": last.cluster_count,
            "curve": curve_path,
        });
        let eval_path = dir.join("eval.json");
        fs::write(
            &eval_path,
            serde_json::to_string_pretty(&entry).expect("json serializes"),
        )
        .map_err(|e| io_error(&eval_path, e))?;
        summary.push(entry);
    }
    print_json(&json!(summary));
    Ok(())
}

pub fn replay_cmd(common: &Common, log: Option<&Path>) -> Result<(), CliError> {
    let cfg = match (&common.config, log) {
        (None, None) => return Err(CliError::new(ExitKind::Validation, "pass --log or --config")),
        (None, Some(_)) => None,
        (Some(_), _) => Some(load_config(common)?),
    };
    let log_path = match (log, &cfg) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(c)) => run_dir(c, c.models.oracle.fidelity.values()[0]).join(EVENTS_FILE),
        (None, None) => unreachable!("checked above"),
    };
    let read = read_log(&log_path)?;
    if let Some(line) = read.truncated_at {
        eprintln!(
            "warning: {} ends in a partial line {line}; state reflects the events before it",
            log_path.display()
        );
    }
    let graph = replay(&read.records, None)?;
    let scores = match &cfg {
        Some(c) => {
            let dataset = load_dataset(c)?;
            Some(score_graph(&graph, &dataset.truth, c.engine.include_unidentifiable)?)
        }
        None => None,
    };
    if let Some(out) = &common.out {
        fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
        write_snapshot(&out.join("replayed_snapshot.json"), &graph.snapshot())?;
    }
    print_json(&json!({
        "log": log_path,
        "events": read.records.len(),
        "truncated_at_line": read.truncated_at,
        "seq": graph.last_seq(),
        "annotations": graph.len(),
        "clusters": graph.cluster_count(),
        "conflicts": graph.find_conflicts().len(),
        "human_decisions": read.records.iter().filter(|r| r.counts_as_effort()).count(),
        "gm": scores.map(|s| s.gm),
        "scores": scores,
    }));
    Ok(())
}

/// Builds the live engine: labeled set applied, stream queued, first batch
/// matched, and the event log persisted under the output directory.
pub fn live_state(cfg: &RunConfiguration) -> Result<server::Shared, CliError> {
    let mut cfg = cfg.clone();
    cfg.engine.human_channel = ChannelKind::LiveQueue;
    let prepared = prepare(&cfg)?;
    let engine = build_engine(&cfg, &prepared)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let log_path = dir.join(EVENTS_FILE);
    write_log(&log_path, engine.log())?;
    let mut engine = engine.with_log_sink(LogAppender::open(&log_path)?);
    engine.enqueue_stream(prepared.split.stream);
    engine
        .advance_live()
        .map_err(|e| CliError::new(ExitKind::Runtime, e.to_string()))?;
    Ok(Arc::new(Mutex::new(engine)))
}

pub fn serve_cmd(common: &Common, listen: &str) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let state = live_state(&cfg)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new(ExitKind::Runtime, e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| CliError::new(ExitKind::Io, format!("cannot bind {listen}: {e}")))?;
        eprintln!(
            "listening on http://{}",
            listener
                .local_addr()
                .map_err(|e| CliError::new(ExitKind::Io, e.to_string()))?
        );
        axum::serve(listener, server::router(state))
            .await
            .map_err(|e| CliError::new(ExitKind::Runtime, e.to_string()))
    })
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(c) => generate_cmd(c),
        Command::Run(c) => run_cmd(c),
        Command::Serve { common, listen } => serve_cmd(common, listen),
        Command::Eval(c) => eval_cmd(c),
        Command::Replay { common, log } => replay_cmd(common, log.as_deref()),
    }
}
