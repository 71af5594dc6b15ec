//! Multi-seed benchmark runner and its report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ctalvae_core::bench::{median, run_seed, BenchSettings, SeedResult};
use ctalvae_core::synth::DomainSpec;
use ctalvae_core::ModelKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, AppError, Result};

/// Inputs of a benchmark run, echoed into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEcho {
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub settings: BenchSettings,
    pub seeds: Vec<u64>,
}

/// Median metrics of one model over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub accuracy: f64,
    pub mcc: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seeds: Vec<SeedResult>,
    pub medians: Vec<ModelSummary>,
    pub config: BenchEcho,
    pub runtime_seconds: f64,
}

impl BenchReport {
    pub fn median_of(&self, kind: ModelKind) -> Option<&ModelSummary> {
        self.medians.iter().find(|m| m.kind == kind)
    }
}

/// Runs every seed (concurrently) and aggregates medians per model.
pub fn run_benchmark(
    source: &DomainSpec,
    target: &DomainSpec,
    settings: &BenchSettings,
    seeds: &[u64],
) -> Result<BenchReport> {
    if seeds.is_empty() {
        return Err(AppError::Config("at least one seed is required".into()));
    }
    let start = Instant::now();
    let results = seeds
        .par_iter()
        .map(|&seed| {
            log::info!("seed {seed}: start");
            let r = run_seed(source, target, settings, seed);
            if let Ok(r) = &r {
                for m in &r.models {
                    log::info!(
                        "seed {seed}: {} accuracy {:.4} mcc {:.4} sensitivity {:.4}",
                        m.kind.as_str(),
                        m.metrics.accuracy,
                        m.metrics.mcc,
                        m.metrics.sensitivity
                    );
                }
            }
            r
        })
        .collect::<Result<Vec<_>, _>>()?;
    let medians = ModelKind::ALL
        .iter()
        .map(|&kind| {
            let pick = |f: fn(&ctalvae_core::metrics::Metrics) -> f64| {
                let v: Vec<f64> = results
                    .iter()
                    .flat_map(|r| r.models.iter().filter(|m| m.kind == kind).map(|m| f(&m.metrics)))
                    .collect();
                median(&v).unwrap_or(f64::NAN)
            };
            ModelSummary {
                kind,
                accuracy: pick(|m| m.accuracy),
                mcc: pick(|m| m.mcc),
                sensitivity: pick(|m| m.sensitivity),
            }
        })
        .collect();
    Ok(BenchReport {
        seeds: results,
        medians,
        config: BenchEcho {
            source: source.clone(),
            target: target.clone(),
            settings: settings.clone(),
            seeds: seeds.to_vec(),
        },
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn metrics_csv(report: &BenchReport) -> String {
    let mut out = String::from("model,seed,accuracy,mcc,sensitivity\n");
    for r in &report.seeds {
        for m in &r.models {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.kind.as_str(),
                r.seed,
                m.metrics.accuracy,
                m.metrics.mcc,
                m.metrics.sensitivity
            );
        }
    }
    out
}

/// Writes `report.json` and `metrics.csv` into `dir`, creating it if needed.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    let path = dir.join(REPORT_JSON);
    fs::write(&path, json).map_err(io_err(&path))?;
    let path = dir.join(METRICS_CSV);
    fs::write(&path, metrics_csv(report)).map_err(io_err(&path))
}

pub fn load_report(path: &Path) -> Result<BenchReport> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
