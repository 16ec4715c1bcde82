//! Run configuration: one JSON document with `dataset`, `split`, `models`,
//! `engine` and `output` sections plus a global seed. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GeneratorConfig, SplitConfig};
use crate::engine::EngineConfig;
use crate::sim::{OracleErrorMode, RankerParams, VerifierParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Generate(GeneratorConfig),
    /// Relative paths resolve against the configuration file's directory.
    Manifest {
        path: PathBuf,
    },
}

/// One fidelity or a sweep over several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fidelity {
    One(f64),
    Sweep(Vec<f64>),
}

impl Fidelity {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Fidelity::One(f) => vec![*f],
            Fidelity::Sweep(v) => v.clone(),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, Fidelity::Sweep(_))
    }
}

impl Default for Fidelity {
    fn default() -> Self {
        Fidelity::One(1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub fidelity: Fidelity,
    #[serde(default)]
    pub error_mode: OracleErrorMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default)]
    pub ranker: RankerParams,
    #[serde(default)]
    pub verifier: VerifierParams,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfiguration {
    /// Drives the split and every model stream. The generator keeps its own
    /// seed so a dataset stays fixed across runs.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSource,
    pub split: SplitConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfiguration {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetSource::Manifest { path: p } = &mut cfg.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if let DatasetSource::Generate(g) = &self.dataset {
            g.validate().map_err(|e| invalid(&e))?;
        }
        self.split.validate().map_err(|e| invalid(&e))?;
        self.models.ranker.validate().map_err(|e| invalid(&e))?;
        self.models.verifier.validate().map_err(|e| invalid(&e))?;
        let fidelities = self.models.oracle.fidelity.values();
        if fidelities.is_empty() {
            return Err(ConfigError::Invalid("oracle fidelity sweep is empty".into()));
        }
        if let Some(f) = fidelities.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(ConfigError::Invalid(format!("oracle fidelity {f} outside [0, 1]")));
        }
        self.engine.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }
}

/// Independent seed for a named stream, via SplitMix64 over the global seed
/// and an FNV-1a hash of the name.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
