//! JSON run configuration.

use std::path::{Path, PathBuf};

use ctalvae_core::bench::BenchSettings;
use ctalvae_core::synth::DomainSpec;
use ctalvae_core::train::TrainConfig;
use ctalvae_core::vae::CoreConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, AppError, Result};

/// Default file locations, each overridable by the matching flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub flows: Option<PathBuf>,
    pub shots: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every tunable of a run. Missing keys, at any depth, take the value of
/// [`RunConfig::default`]; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub n_shots: usize,
    pub threshold_q: f64,
    pub core: CoreConfig,
    pub train: TrainConfig,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchSettings::default();
        Self {
            seed: 7,
            seeds: vec![1, 2, 3, 4, 5],
            n_shots: bench.n_shots,
            threshold_q: bench.threshold_q,
            core: bench.core,
            train: bench.train,
            source: DomainSpec::source_default(),
            target: DomainSpec::target_default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config_err = |e: serde_json::Error| AppError::Config(e.to_string());
        let overrides: Value = serde_json::from_str(text).map_err(config_err)?;
        let mut merged = serde_json::to_value(RunConfig::default())?;
        overlay(&mut merged, overrides);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn bench_settings(&self) -> BenchSettings {
        BenchSettings {
            core: self.core,
            train: self.train,
            n_shots: self.n_shots,
            threshold_q: self.threshold_q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(AppError::Config("seeds must not be empty".into()));
        }
        self.bench_settings().validate()?;
        self.source.validate()?;
        self.target.validate()?;
        Ok(())
    }
}

/// Recursively replaces entries of `base` with those of `over`; objects merge
/// key by key, everything else is replaced whole.
fn overlay(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(base), Value::Object(over)) => {
            for (k, v) in over {
                match base.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        base.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
