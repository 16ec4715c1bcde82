//! Wires a run configuration into a dataset, split, models and engine, and
//! writes a run's artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{derive_seed, ConfigError, DatasetSource, RunConfiguration};
use crate::dataset::{generate, load_manifest, split, Dataset, DatasetError, Split};
use crate::engine::{Engine, EngineError, RunReport};
use crate::eventlog::{write_log, write_snapshot, LogError};
use crate::metrics::MetricsError;
use crate::sim::{ModelError, OracleModel, RankerModel, VerifierModel};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const RANK_FILE: &str = "rank_eval.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn load_dataset(cfg: &RunConfiguration) -> Result<Dataset, DatasetError> {
    match &cfg.dataset {
        DatasetSource::Generate(g) => generate(g),
        DatasetSource::Manifest { path } => load_manifest(path),
    }
}

pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
}

pub fn prepare(cfg: &RunConfiguration) -> Result<Prepared, ExperimentError> {
    let dataset = load_dataset(cfg)?;
    let split = split(&dataset, &cfg.split, derive_seed(cfg.seed, "split"))?;
    Ok(Prepared { dataset, split })
}

/// An engine holding the labeled set, with models seeded from the global seed.
pub fn build_engine(cfg: &RunConfiguration, prepared: &Prepared) -> Result<Engine, ExperimentError> {
    let ranker = RankerModel::new(cfg.models.ranker.clone(), derive_seed(cfg.seed, "ranker"))?;
    let verifier = VerifierModel::new(cfg.models.verifier.clone(), derive_seed(cfg.seed, "verifier"))?;
    let mut engine = Engine::new(cfg.engine.clone(), ranker, verifier, prepared.dataset.truth.clone())?;
    engine.seed_labeled(&prepared.split.labeled)?;
    Ok(engine)
}

/// One simulated run against an oracle of the given fidelity.
pub fn simulate(
    cfg: &RunConfiguration,
    prepared: &Prepared,
    fidelity: f64,
) -> Result<(Engine, RunReport), ExperimentError> {
    let mut engine = build_engine(cfg, prepared)?;
    let mut oracle = OracleModel::new(fidelity, cfg.models.oracle.error_mode, derive_seed(cfg.seed, "oracle"))?;
    let report = engine.run_to_convergence(prepared.split.stream.iter().cloned(), &mut oracle)?;
    Ok((engine, report))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the event log, final snapshot, report, effort curve and ranking table.
pub fn write_run(dir: &Path, engine: &Engine, report: &RunReport) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_log(&dir.join(EVENTS_FILE), engine.log())?;
    write_snapshot(&dir.join(SNAPSHOT_FILE), &engine.graph().snapshot())?;
    let report_path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(io(&report_path))?;
    let curve_path = dir.join(CURVE_FILE);
    report
        .curve
        .write_csv(fs::File::create(&curve_path).map_err(io(&curve_path))?)?;
    if let Some(rank) = &report.rank_eval {
        let rank_path = dir.join(RANK_FILE);
        rank.write_csv(fs::File::create(&rank_path).map_err(io(&rank_path))?)?;
    }
    Ok(())
}

/// Output directory for one fidelity; sweeps get one subdirectory per value.
pub fn run_dir(cfg: &RunConfiguration, fidelity: f64) -> PathBuf {
    if cfg.models.oracle.fidelity.is_sweep() {
        cfg.output.dir.join(format!("fidelity-{fidelity}"))
    } else {
        cfg.output.dir.clone()
    }
}

/// Runs every configured fidelity on one dataset and split, writing each run.
pub fn run_experiment(cfg: &RunConfiguration) -> Result<Vec<(f64, PathBuf, RunReport)>, ExperimentError> {
    let prepared = prepare(cfg)?;
    let mut out = Vec::new();
    for fidelity in cfg.models.oracle.fidelity.values() {
        let (engine, report) = simulate(cfg, &prepared, fidelity)?;
        let dir = run_dir(cfg, fidelity);
        write_run(&dir, &engine, &report)?;
        out.push((fidelity, dir, report));
    }
    Ok(out)
}
