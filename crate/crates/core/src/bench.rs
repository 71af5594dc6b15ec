//! Per-seed comparison protocol on the synthetic two-domain benchmark.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptors::DomainId;
use crate::error::{Error, Result};
use crate::flow::{fit_normalizer, receiver_windows, sequences_from_windows, window_labels, FlowRecord, Label};
use crate::flow::{Normalizer, Sequence, Window};
use crate::metrics::{evaluate, Metrics};
use crate::model::ModelKind;
use crate::synth::{generate_domain, DomainSpec};
use crate::train::{adapt_target, classify, fit_threshold, score, train_source, TrainConfig};
use crate::vae::CoreConfig;

/// Share of source sequences used for phase-one training.
pub const SOURCE_TRAIN_FRACTION: f64 = 0.8;

/// Model and protocol settings of a benchmark run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BenchSettings {
    pub core: CoreConfig,
    pub train: TrainConfig,
    pub n_shots: usize,
    pub threshold_q: f64,
}

impl BenchSettings {
    /// Core small enough for a single-core desk run.
    pub fn desk_core() -> CoreConfig {
        CoreConfig {
            core_dim: 8,
            hidden: 16,
            latent: 4,
            seq_len: 30,
        }
    }

    /// Step size and KL weight matched to the desk core.
    pub fn desk_train() -> TrainConfig {
        let mut cfg = TrainConfig {
            lr: 0.003,
            ..TrainConfig::default()
        };
        cfg.weights.lambda_kl = 0.05;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.core.validate()?;
        self.train.validate()?;
        if self.n_shots == 0 {
            return Err(Error::InvalidConfig("n_shots must be positive".into()));
        }
        if !(self.threshold_q > 0.0 && self.threshold_q <= 1.0) {
            return Err(Error::QuantileOutOfRange(self.threshold_q));
        }
        Ok(())
    }
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            core: Self::desk_core(),
            train: Self::desk_train(),
            n_shots: 5,
            threshold_q: 0.99,
        }
    }
}

/// Outcome of one model on one seed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelResult {
    pub kind: ModelKind,
    pub threshold: f64,
    pub metrics: Metrics,
}

/// Outcome of all three models on one seed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeedResult {
    pub seed: u64,
    pub eval_sequences: usize,
    pub anomalous_sequences: usize,
    pub models: Vec<ModelResult>,
}

/// Inputs of one seed. Truth labels are kept apart from every sequence.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub source_normalizer: Normalizer,
    pub source_train: Vec<Sequence>,
    pub source_holdout: Vec<Sequence>,
    pub target_normalizer: Normalizer,
    pub shots: Vec<Sequence>,
    pub eval: Vec<Sequence>,
    pub eval_truth: Vec<Label>,
}

/// SplitMix64 finalizer over a pair of seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn subset(flows: &[FlowRecord], rows: &[usize]) -> Vec<FlowRecord> {
    rows.iter().map(|&i| flows[i].clone()).collect()
}

/// Indices of `n_shots` windows taken round-robin over receivers from their
/// earliest windows, in ascending order.
pub fn select_shots(windows: &[Window], n_shots: usize) -> Result<Vec<usize>> {
    let mut by_receiver: Vec<Vec<usize>> = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        match by_receiver.last_mut() {
            Some(g) if windows[g[0]].receiver == w.receiver => g.push(i),
            _ => by_receiver.push(alloc::vec![i]),
        }
    }
    let mut picked = Vec::with_capacity(n_shots);
    let mut round = 0;
    while picked.len() < n_shots {
        let before = picked.len();
        for g in &by_receiver {
            if picked.len() < n_shots && round < g.len() {
                picked.push(g[round]);
            }
        }
        if picked.len() == before {
            return Err(Error::InvalidConfig("not enough target windows for the requested shots".into()));
        }
        round += 1;
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Generates both domains for `seed` and cuts them into training shots and
/// evaluation sequences.
///
/// Shots come from [`select_shots`]; the generator's clean prefix keeps them
/// attack-free.
pub fn prepare_seed(source: &DomainSpec, target: &DomainSpec, settings: &BenchSettings, seed: u64) -> Result<SeedData> {
    settings.validate()?;
    let t = settings.core.seq_len;

    let (src_flows, _) = generate_domain(&source.with_seed(mix_seed(source.seed, seed)))?;
    let source_normalizer = fit_normalizer(&src_flows)?;
    let src_windows = receiver_windows(&src_flows, t)?;
    let mut src_seqs = sequences_from_windows(&src_flows, &src_windows, &source_normalizer, t)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED_5917));
    src_seqs.shuffle(&mut split_rng);
    let n_train = libm::ceil(SOURCE_TRAIN_FRACTION * src_seqs.len() as f64) as usize;
    let source_holdout = src_seqs.split_off(n_train.min(src_seqs.len()));

    let (tgt_flows, tgt_labels) = generate_domain(&target.with_seed(mix_seed(target.seed, seed)))?;
    let windows = receiver_windows(&tgt_flows, t)?;
    let shot_idx = select_shots(&windows, settings.n_shots)?;
    let shot_rows: Vec<usize> = shot_idx.iter().flat_map(|&i| windows[i].rows.iter().copied()).collect();
    let target_normalizer = fit_normalizer(&subset(&tgt_flows, &shot_rows))?;
    let all = sequences_from_windows(&tgt_flows, &windows, &target_normalizer, t)?;
    let truth = window_labels(&windows, &tgt_labels);
    let mut shots = Vec::new();
    let mut eval = Vec::new();
    let mut eval_truth = Vec::new();
    for (i, (s, l)) in all.into_iter().zip(truth).enumerate() {
        if shot_idx.binary_search(&i).is_ok() {
            shots.push(s);
        } else {
            eval.push(s);
            eval_truth.push(l);
        }
    }
    Ok(SeedData {
        source_normalizer,
        source_train: src_seqs,
        source_holdout,
        target_normalizer,
        shots,
        eval,
        eval_truth,
    })
}

/// Trains, adapts, thresholds and evaluates one model kind on prepared data.
pub fn run_model(kind: ModelKind, data: &SeedData, settings: &BenchSettings, seed: u64) -> Result<ModelResult> {
    let (bundle, _) = train_source(
        kind,
        settings.core,
        data.source_normalizer.clone(),
        &data.source_train,
        &settings.train,
        seed,
    )?;
    let (bundle, _) = adapt_target(bundle, &data.shots, data.target_normalizer.clone(), &settings.train, seed)?;
    let target = DomainId::target();
    let threshold = fit_threshold(&score(&bundle, &target, &data.shots)?, settings.threshold_q)?;
    let predicted = classify(&score(&bundle, &target, &data.eval)?, threshold);
    let metrics = evaluate(&predicted, &data.eval_truth)?;
    Ok(ModelResult {
        kind,
        threshold,
        metrics,
    })
}

/// Full protocol for one seed: every model kind, in [`ModelKind::ALL`] order.
pub fn run_seed(source: &DomainSpec, target: &DomainSpec, settings: &BenchSettings, seed: u64) -> Result<SeedResult> {
    let data = prepare_seed(source, target, settings, seed)?;
    let models = ModelKind::ALL
        .iter()
        .map(|&kind| run_model(kind, &data, settings, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedResult {
        seed,
        eval_sequences: data.eval.len(),
        anomalous_sequences: data.eval_truth.iter().filter(|l| l.is_anomalous()).count(),
        models,
    })
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
