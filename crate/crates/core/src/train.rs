//! Two-phase training, scoring and threshold rules.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adaptors::{set_trainable, DomainId, TrainScope};
use crate::error::{check_dim, Error, Result};
use crate::flow::{Label, Normalizer, Sequence};
use crate::model::{ModelBundle, ModelKind, Net};
use crate::net::{AdamConfig, Grads, OptimizerState, Values};
use crate::objectives::{
    contrastive_term_grad, kl_loss, kl_loss_grad, make_triplets, mse_loss, mse_loss_grad, ContrastiveConfig,
    LossWeights, PairKind, Triplet,
};
use crate::vae::{sample_latent, sample_latent_backward, CoreConfig};

const STREAM_INIT: u64 = 0;
const STREAM_ORDER: u64 = 1;
const STREAM_EPS: u64 = 2;
const STREAM_TRIPLETS: u64 = 3;
const STREAM_TARGET_INIT: u64 = 4;

/// Optimization settings shared by both training phases.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    /// Source-phase epochs.
    pub epochs: usize,
    /// Target-phase epochs.
    pub adapt_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub contrastive: ContrastiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            adapt_epochs: 100,
            lr: 0.001,
            batch_size: 16,
            weights: LossWeights::default(),
            contrastive: ContrastiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.adapt_epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        self.weights.validate()?;
        self.contrastive.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Mean loss terms of one epoch. Terms a model does not use are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub rec: f64,
    pub kl: Option<f64>,
    pub con: Option<f64>,
}

/// Loss terms of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub rec: f64,
    pub kl: Option<f64>,
    pub con: Option<f64>,
}

/// Evaluates the weighted batch loss of `kind` and accumulates its gradient
/// into `g`.
///
/// `eps` holds one latent noise vector per anchor (ignored for
/// [`ModelKind::Ae`]). `triplets` must be empty or hold the same number of
/// triplets for every anchor, grouped anchor by anchor; they are only used by
/// [`ModelKind::CtalVae`].
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    net: Net<'_>,
    p: Values<'_>,
    g: &mut Grads<'_>,
    kind: ModelKind,
    anchors: &[Sequence],
    eps: &[Vec<f64>],
    triplets: &[Triplet],
    weights: &LossWeights,
    margin: f64,
) -> Result<BatchLoss> {
    if anchors.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let b = anchors.len();
    let latent = net.vae.config.latent;
    if kind.samples_latent() {
        check_dim("noise vectors", b, eps.len())?;
    }
    let contrast = kind.uses_contrastive() && !triplets.is_empty();
    let per_anchor = if contrast {
        if !triplets.len().is_multiple_of(b) {
            return Err(Error::LengthMismatch {
                left: triplets.len(),
                right: b,
            });
        }
        triplets.len() / b
    } else {
        0
    };
    let n_pairs = 2 * triplets.len();
    let inv_b = 1.0 / b as f64;

    let (mut rec, mut kl, mut con) = (0.0, 0.0, 0.0);
    for (i, seq) in anchors.iter().enumerate() {
        let (lp, enc) = net.encode_traced(p, seq)?;
        let z = if kind.samples_latent() {
            sample_latent(&lp, &eps[i])?
        } else {
            lp.mu.clone()
        };
        let (x_hat, dec) = net.decode_traced(p, &z, seq.seq_len())?;
        rec += mse_loss(&seq.data, &x_hat, &seq.mask)?;
        let dx_hat = mse_loss_grad(&seq.data, &x_hat, &seq.mask, weights.lambda_rec * inv_b)?;
        let dz = net.decode_backward(p, g, &dec, &dx_hat);
        let (mut dmu, mut dlv) = if kind.samples_latent() {
            sample_latent_backward(&lp, &eps[i], &dz)
        } else {
            (dz, vec![0.0; latent])
        };
        if kind.uses_kl() {
            kl += kl_loss(&lp);
            let (gm, gl) = kl_loss_grad(&lp);
            let s = weights.lambda_kl * inv_b;
            for j in 0..latent {
                dmu[j] += s * gm[j];
                dlv[j] += s * gl[j];
            }
        }
        if contrast {
            let scale = weights.lambda_con / n_pairs as f64;
            for t in &triplets[i * per_anchor..(i + 1) * per_anchor] {
                let (lp_pos, enc_pos) = net.encode_traced(p, &t.positive)?;
                let (lp_neg, enc_neg) = net.encode_traced(p, &t.negative)?;
                let (v1, da1, dpos) = contrastive_term_grad(&lp.mu, &lp_pos.mu, PairKind::Similar, margin);
                let (v2, da2, dneg) = contrastive_term_grad(&lp.mu, &lp_neg.mu, PairKind::Dissimilar, margin);
                con += v1 + v2;
                for j in 0..latent {
                    dmu[j] += scale * (da1[j] + da2[j]);
                }
                let zero = vec![0.0; latent];
                let dpos: Vec<f64> = dpos.iter().map(|v| v * scale).collect();
                let dneg: Vec<f64> = dneg.iter().map(|v| v * scale).collect();
                net.encode_backward(p, g, &t.positive, &enc_pos, &dpos, &zero);
                net.encode_backward(p, g, &t.negative, &enc_neg, &dneg, &zero);
            }
        }
        net.encode_backward(p, g, seq, &enc, &dmu, &dlv);
    }
    let rec = rec * inv_b;
    let kl = kind.uses_kl().then_some(kl * inv_b);
    let con = kind.uses_contrastive().then(|| if n_pairs == 0 { 0.0 } else { con / n_pairs as f64 });
    let total = weights.lambda_rec * rec + weights.lambda_kl * kl.unwrap_or(0.0) + weights.lambda_con * con.unwrap_or(0.0);
    Ok(BatchLoss { total, rec, kl, con })
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn check_sequences(sequences: &[Sequence], seq_len: usize) -> Result<usize> {
    let first = sequences.first().ok_or(Error::Empty("training sequences"))?;
    let dim = first.dim();
    for s in sequences {
        check_dim("sequence length", seq_len, s.seq_len())?;
        check_dim("sequence feature width", dim, s.dim())?;
        check_dim("sequence mask", seq_len, s.mask.len())?;
    }
    Ok(dim)
}

fn unlabeled(sequences: &[Sequence]) -> Vec<Sequence> {
    sequences
        .iter()
        .map(|s| Sequence {
            label: None,
            ..s.clone()
        })
        .collect()
}

fn run_epochs(
    bundle: &mut ModelBundle,
    domain: &DomainId,
    data: &[Sequence],
    epochs: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochLoss>> {
    let mut opt = OptimizerState::new(&bundle.store, cfg.adam());
    let mut order_rng = rng(seed, STREAM_ORDER);
    let mut eps_rng = rng(seed, STREAM_EPS);
    let mut triplet_rng = rng(seed, STREAM_TRIPLETS);
    let kind = bundle.kind;
    let latent = bundle.vae.config.latent;
    let pair_index = bundle
        .adaptors
        .iter()
        .position(|a| &a.domain == domain)
        .ok_or_else(|| Error::UnknownDomain(domain.as_str().into()))?;
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut rec, mut kl, mut con) = (0.0, 0.0, 0.0, 0.0);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let anchors: Vec<Sequence> = chunk.iter().map(|&i| data[i].clone()).collect();
            let eps: Vec<Vec<f64>> = if kind.samples_latent() {
                anchors
                    .iter()
                    .map(|_| (0..latent).map(|_| eps_rng.sample(StandardNormal)).collect())
                    .collect()
            } else {
                Vec::new()
            };
            let triplets = if kind.uses_contrastive() {
                make_triplets(&anchors, &anchors, &cfg.contrastive, triplet_rng.next_u64())?
            } else {
                Vec::new()
            };
            let ModelBundle {
                store, vae, adaptors, ..
            } = &mut *bundle;
            store.zero_grad();
            let (p, mut g) = store.split();
            let net = Net::new(vae, &adaptors[pair_index]);
            let loss = batch_objective(
                net,
                p,
                &mut g,
                kind,
                &anchors,
                &eps,
                &triplets,
                &cfg.weights,
                cfg.contrastive.margin,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            opt.step(store);
            let w = chunk.len() as f64;
            total += w * loss.total;
            rec += w * loss.rec;
            kl += w * loss.kl.unwrap_or(0.0);
            con += w * loss.con.unwrap_or(0.0);
        }
        let inv = 1.0 / n as f64;
        trace.push(EpochLoss {
            epoch,
            total: total * inv,
            rec: rec * inv,
            kl: kind.uses_kl().then_some(kl * inv),
            con: kind.uses_contrastive().then_some(con * inv),
        });
    }
    Ok(trace)
}

/// Phase one: trains the core and the source adaptors jointly.
///
/// Core weights depend only on `seed`, so bundles of every kind built with
/// the same seed start from identical cores.
pub fn train_source(
    kind: ModelKind,
    core: CoreConfig,
    normalizer: Normalizer,
    sequences: &[Sequence],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelBundle, Vec<EpochLoss>)> {
    core.validate()?;
    cfg.validate()?;
    let dim = check_sequences(sequences, core.seq_len)?;
    check_dim("normalizer width", dim, normalizer.dim())?;
    let mut bundle = ModelBundle::new(kind, core)?;
    let mut init = rng(seed, STREAM_INIT);
    bundle.init_core(&mut init);
    let source = DomainId::source();
    let pair = bundle.add_domain(source.clone(), dim)?;
    pair.init(&mut bundle.store, &mut init);
    bundle.set_normalizer(source.clone(), normalizer)?;
    set_trainable(&mut bundle, &TrainScope::All)?;
    let data = unlabeled(sequences);
    let trace = run_epochs(&mut bundle, &source, &data, cfg.epochs, cfg, seed)?;
    Ok((bundle, trace))
}

/// Phase one for the reconstruction-only and plain variational baselines.
pub fn train_baseline(
    kind: ModelKind,
    core: CoreConfig,
    normalizer: Normalizer,
    sequences: &[Sequence],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelBundle, Vec<EpochLoss>)> {
    if kind == ModelKind::CtalVae {
        return Err(Error::InvalidConfig("baseline kind must be ae or vae".into()));
    }
    train_source(kind, core, normalizer, sequences, cfg, seed)
}

/// Phase two: fits target adaptors on a few benign shots with the core
/// frozen.
///
/// The target pair is warm-started from the source pair when the feature
/// widths agree and freshly initialized otherwise.
pub fn adapt_target(
    mut bundle: ModelBundle,
    shots: &[Sequence],
    normalizer: Normalizer,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelBundle, Vec<EpochLoss>)> {
    cfg.validate()?;
    if shots.is_empty() {
        return Err(Error::Empty("few-shot anchors"));
    }
    let dim = check_sequences(shots, bundle.config().seq_len)?;
    check_dim("normalizer width", dim, normalizer.dim())?;
    let target = DomainId::target();
    let pair = match bundle.adaptor(&target) {
        Ok(existing) => {
            check_dim("target feature width", existing.domain_dim, dim)?;
            existing.clone()
        }
        Err(_) => bundle.add_domain(target.clone(), dim)?,
    };
    let source = bundle.adaptor(&DomainId::source()).ok().cloned();
    match source {
        Some(src) if src.domain_dim == dim => pair.copy_from(&mut bundle.store, &src)?,
        _ => pair.init(&mut bundle.store, &mut rng(seed, STREAM_TARGET_INIT)),
    }
    bundle.set_normalizer(target.clone(), normalizer)?;
    set_trainable(&mut bundle, &TrainScope::AdaptorsOf(target.clone()))?;
    let data = unlabeled(shots);
    let trace = run_epochs(&mut bundle, &target, &data, cfg.adapt_epochs, cfg, seed)?;
    Ok((bundle, trace))
}

/// Anomaly scores of `sequences` in `domain`, in input order.
pub fn score(bundle: &ModelBundle, domain: &DomainId, sequences: &[Sequence]) -> Result<Vec<f64>> {
    if bundle.normalizer(domain).is_none() {
        return Err(Error::UnknownDomain(domain.as_str().into()));
    }
    bundle.score(domain, sequences)
}

/// Nearest-rank empirical `q`-quantile: the value at 1-based rank
/// `ceil(q * n)` of the ascending sort.
pub fn fit_threshold(benign_scores: &[f64], q: f64) -> Result<f64> {
    if benign_scores.is_empty() {
        return Err(Error::Empty("threshold scores"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::QuantileOutOfRange(q));
    }
    if benign_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    let mut sorted = benign_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let r = q * n as f64;
    let nearest = libm::round(r);
    let rank = if (r - nearest).abs() <= 1e-9 * n as f64 {
        nearest
    } else {
        libm::ceil(r)
    };
    let rank = (rank as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Anomalous iff the score is strictly above the threshold.
pub fn classify(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| if s > threshold { Label::Anomalous } else { Label::Benign })
        .collect()
}

/// Evaluates [`batch_objective`] for `domain` of a bundle, accumulating
/// gradients into the bundle's store.
pub fn bundle_objective(
    bundle: &mut ModelBundle,
    domain: &DomainId,
    anchors: &[Sequence],
    eps: &[Vec<f64>],
    triplets: &[Triplet],
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let idx = bundle
        .adaptors
        .iter()
        .position(|a| &a.domain == domain)
        .ok_or_else(|| Error::UnknownDomain(domain.as_str().into()))?;
    let kind = bundle.kind;
    let ModelBundle {
        store, vae, adaptors, ..
    } = bundle;
    let (p, mut g) = store.split();
    batch_objective(
        Net::new(vae, &adaptors[idx]),
        p,
        &mut g,
        kind,
        anchors,
        eps,
        triplets,
        &cfg.weights,
        cfg.contrastive.margin,
    )
}
