//! `ctalvae` command line.
//!
//! Settings resolve in three layers: built-in defaults, then `--config`,
//! then flags. Exit status is 0 on success, 1 on usage errors and 2 on
//! data or validation errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ctalvae_core::adaptors::DomainId;
use ctalvae_core::bench::{mix_seed, select_shots};
use ctalvae_core::flow::{build_sequences, fit_normalizer, receiver_windows, window_labels};
use ctalvae_core::metrics::evaluate;
use ctalvae_core::synth::{generate_domain, DomainSpec};
use ctalvae_core::train::{adapt_target, classify, fit_threshold, score, train_source};
use ctalvae_core::{FeatureSchema, FlowRecord, Label, ModelKind};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{io_err, AppError, Result};
use crate::flows::{load_flows, load_rows, save_flows, save_rows, LabelRow, ScoreRow};
use crate::report::{emit_report, run_benchmark};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const LOG_ENV: &str = "CTALVAE_LOG";

#[derive(Debug, Parser)]
#[command(name = "ctalvae", version, about = "Few-shot cross-domain flow anomaly detection")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "ctal_vae")]
    CtalVae,
    Vae,
    Ae,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::CtalVae => ModelKind::CtalVae,
            KindArg::Vae => ModelKind::Vae,
            KindArg::Ae => ModelKind::Ae,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic source/target flow CSVs, sequence labels and target shots.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train core and source adaptors on benign source flows.
    TrainSource {
        #[arg(long, value_name = "CSV")]
        flows: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ctal_vae")]
        kind: KindArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit target adaptors on a few benign target flows; the core stays frozen.
    AdaptTarget {
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        shots: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score every sequence of a flow CSV.
    Score {
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        flows: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        /// Domain whose adaptors to use; defaults to target when present.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Threshold scores and compare them with labels.
    Eval {
        #[arg(long, value_name = "CSV")]
        scores: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        labels: Option<PathBuf>,
        #[arg(long, conflicts_with = "fit_q")]
        threshold: Option<f64>,
        /// Fit the threshold as this quantile of benign-labeled scores.
        #[arg(long)]
        fit_q: Option<f64>,
    },
    /// Run the three-model comparison over all configured seeds.
    Bench {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

enum Failure {
    Usage(String),
    Data(AppError),
}

impl From<AppError> for Failure {
    fn from(e: AppError) -> Self {
        Failure::Data(e)
    }
}

impl From<ctalvae_core::Error> for Failure {
    fn from(e: ctalvae_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("missing --{name} (or the matching `paths` entry in the config)")))
}

/// Installs the stderr logger; the level comes from `CTALVAE_LOG`.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the command line and returns the process exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `ctalvae --help` for usage.");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::TrainSource { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::AdaptTarget { epochs: Some(e), .. } => cfg.train.adapt_epochs = *e,
        Command::Bench { seeds: Some(s), .. } => cfg.seeds = s.clone(),
        _ => {}
    }
    cfg.validate()?;
    log::info!("effective config: {}", serde_json::to_string(&cfg).map_err(AppError::from)?);

    match cli.command {
        Command::Synth { out } => synth(&cfg, &required(out, &cfg.paths.out, "out")?),
        Command::TrainSource { flows, out, kind, .. } => {
            let flows = required(flows, &cfg.paths.flows, "flows")?;
            let out = required(out, &cfg.paths.checkpoint, "out")?;
            train(&cfg, kind.into(), &flows, &out)
        }
        Command::AdaptTarget { ckpt, shots, out, .. } => {
            let ckpt = required(ckpt, &cfg.paths.checkpoint, "ckpt")?;
            let shots = required(shots, &cfg.paths.shots, "shots")?;
            let out = required(out, &None, "out")?;
            adapt(&cfg, &ckpt, &shots, &out)
        }
        Command::Score {
            ckpt,
            flows,
            out,
            domain,
        } => {
            let ckpt = required(ckpt, &cfg.paths.checkpoint, "ckpt")?;
            let flows = required(flows, &cfg.paths.flows, "flows")?;
            let out = required(out, &cfg.paths.scores, "out")?;
            score_cmd(&ckpt, &flows, &out, domain)
        }
        Command::Eval {
            scores,
            labels,
            threshold,
            fit_q,
        } => {
            let scores = required(scores, &cfg.paths.scores, "scores")?;
            let labels = required(labels, &cfg.paths.labels, "labels")?;
            let rule = match (threshold, fit_q) {
                (Some(t), None) => Threshold::Fixed(t),
                (None, Some(q)) => Threshold::Quantile(q),
                (None, None) => Threshold::Quantile(cfg.threshold_q),
                (Some(_), Some(_)) => unreachable!("clap rejects both"),
            };
            eval(&scores, &labels, rule)
        }
        Command::Bench { out, .. } => {
            let out = required(out, &cfg.paths.out, "out")?;
            let report = run_benchmark(&cfg.source, &cfg.target, &cfg.bench_settings(), &cfg.seeds)?;
            for m in &report.medians {
                log::info!(
                    "median {}: accuracy {:.4} mcc {:.4} sensitivity {:.4}",
                    m.kind.as_str(),
                    m.accuracy,
                    m.mcc,
                    m.sensitivity
                );
            }
            emit_report(&report, &out)?;
            log::info!("wrote {} in {:.1}s", out.display(), report.runtime_seconds);
            Ok(())
        }
    }
}

fn schema_for(dim: usize) -> FeatureSchema {
    FeatureSchema::new((0..dim).map(|j| format!("f{j}")).collect()).expect("distinct names")
}

fn sequence_labels(flows: &[FlowRecord], labels: &[Label], seq_len: usize) -> Result<Vec<LabelRow>> {
    let windows = receiver_windows(flows, seq_len)?;
    let truth = window_labels(&windows, labels);
    Ok(windows
        .iter()
        .zip(truth)
        .map(|(w, label)| LabelRow {
            receiver: w.receiver.clone(),
            start_ts: flows[w.rows[0]].ts,
            label,
        })
        .collect())
}

fn synth(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let t = cfg.core.seq_len;
    for (name, spec) in [("source", &cfg.source), ("target", &cfg.target)] {
        let spec: DomainSpec = spec.with_seed(mix_seed(spec.seed, cfg.seed));
        let (flows, labels) = generate_domain(&spec)?;
        let schema = schema_for(spec.feature_dim);
        save_flows(&dir.join(format!("{name}_flows.csv")), &schema, &flows)?;
        save_rows(&dir.join(format!("{name}_labels.csv")), &sequence_labels(&flows, &labels, t)?)?;
        if name == "target" {
            let windows = receiver_windows(&flows, t)?;
            let shots = select_shots(&windows, cfg.n_shots)?;
            let mut rows: Vec<usize> = shots.iter().flat_map(|&i| windows[i].rows.iter().copied()).collect();
            rows.sort_unstable();
            let shot_flows: Vec<FlowRecord> = rows.iter().map(|&i| flows[i].clone()).collect();
            save_flows(&dir.join("target_shots.csv"), &schema, &shot_flows)?;
        }
        log::info!("{name}: {} flows", flows.len());
    }
    Ok(())
}

fn train(cfg: &RunConfig, kind: ModelKind, flows: &Path, out: &Path) -> Result<(), Failure> {
    let (_, flows) = load_flows(flows)?;
    let normalizer = fit_normalizer(&flows)?;
    let seqs = build_sequences(&flows, &normalizer, cfg.core.seq_len)?;
    log::info!("training {} on {} sequences", kind.as_str(), seqs.len());
    let (bundle, trace) = train_source(kind, cfg.core, normalizer, &seqs, &cfg.train, cfg.seed)?;
    for e in &trace {
        log::debug!("epoch {} total {:.6} rec {:.6} kl {:?} con {:?}", e.epoch, e.total, e.rec, e.kl, e.con);
    }
    checkpoint::save(&bundle, out)?;
    Ok(())
}

fn adapt(cfg: &RunConfig, ckpt: &Path, shots: &Path, out: &Path) -> Result<(), Failure> {
    let bundle = checkpoint::load(ckpt)?;
    let (_, flows) = load_flows(shots)?;
    let normalizer = fit_normalizer(&flows)?;
    let seqs = build_sequences(&flows, &normalizer, bundle.config().seq_len)?;
    log::info!("adapting on {} shot sequences", seqs.len());
    let (bundle, trace) = adapt_target(bundle, &seqs, normalizer, &cfg.train, cfg.seed)?;
    for e in &trace {
        log::debug!("epoch {} total {:.6} rec {:.6} kl {:?} con {:?}", e.epoch, e.total, e.rec, e.kl, e.con);
    }
    let shot_scores = score(&bundle, &DomainId::target(), &seqs)?;
    log::info!(
        "threshold at q={}: {}",
        cfg.threshold_q,
        fit_threshold(&shot_scores, cfg.threshold_q)?
    );
    checkpoint::save(&bundle, out)?;
    Ok(())
}

fn score_cmd(ckpt: &Path, flows: &Path, out: &Path, domain: Option<String>) -> Result<(), Failure> {
    let bundle = checkpoint::load(ckpt)?;
    let domain = match domain {
        Some(d) => DomainId::new(d)?,
        None if bundle.adaptor(&DomainId::target()).is_ok() => DomainId::target(),
        None => DomainId::source(),
    };
    let pair = bundle.adaptor(&domain)?;
    let (schema, flows) = load_flows(flows)?;
    if schema.dim() != pair.domain_dim {
        return Err(ctalvae_core::Error::DimensionMismatch {
            context: "flow feature columns vs checkpoint domain",
            expected: pair.domain_dim,
            actual: schema.dim(),
        }
        .into());
    }
    let normalizer = bundle
        .normalizer(&domain)
        .ok_or_else(|| AppError::Checkpoint(format!("no normalizer for domain `{domain}`")))?;
    let seqs = build_sequences(&flows, normalizer, bundle.config().seq_len)?;
    let scores = score(&bundle, &domain, &seqs)?;
    save_rows(out, &ScoreRow::from_sequences(&seqs, &scores))?;
    log::info!("scored {} sequences", seqs.len());
    Ok(())
}

enum Threshold {
    Fixed(f64),
    Quantile(f64),
}

fn eval(scores: &Path, labels: &Path, rule: Threshold) -> Result<(), Failure> {
    let scores: Vec<ScoreRow> = load_rows(scores)?;
    let labels: Vec<LabelRow> = load_rows(labels)?;
    let key = |r: &str, t: f64| (r.to_string(), t.to_bits());
    let truth: std::collections::HashMap<_, _> = labels.iter().map(|l| (key(&l.receiver, l.start_ts), l.label)).collect();
    let mut joined = Vec::with_capacity(scores.len());
    for s in &scores {
        let label = truth.get(&key(&s.receiver, s.start_ts)).ok_or_else(|| AppError::Csv {
            row: 0,
            message: format!("no label for receiver {} at {}", s.receiver, s.start_ts),
        })?;
        joined.push((s.score, *label));
    }
    let threshold = match rule {
        Threshold::Fixed(t) => t,
        Threshold::Quantile(q) => {
            let benign: Vec<f64> = joined.iter().filter(|(_, l)| !l.is_anomalous()).map(|(s, _)| *s).collect();
            fit_threshold(&benign, q)?
        }
    };
    let values: Vec<f64> = joined.iter().map(|(s, _)| *s).collect();
    let truth: Vec<Label> = joined.iter().map(|(_, l)| *l).collect();
    let metrics = evaluate(&classify(&values, threshold), &truth)?;
    let out = serde_json::json!({ "threshold": threshold, "metrics": metrics });
    println!("{}", serde_json::to_string_pretty(&out).map_err(AppError::from)?);
    Ok(())
}
