//! Loss terms, triplet generation and the weighted total loss.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::flow::Sequence;
use crate::math::{dot, exp, sqrt, Matrix};
use crate::vae::LatentParams;

/// Floor on vector norms inside [`cosine_sim`].
pub const NORM_FLOOR: f64 = 1e-12;

/// Weights of the reconstruction, KL and contrastive terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_kl: f64,
    pub lambda_con: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_kl: 0.1,
            lambda_con: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_rec, self.lambda_kl, self.lambda_con];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidConfig("loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Triplet generation and margin settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ContrastiveConfig {
    /// Cosine-distance margin for dissimilar pairs, in (0, 2].
    pub margin: f64,
    /// Standard deviation of the positive-pair perturbation.
    pub noise_sigma: f64,
    pub triplets_per_anchor: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            noise_sigma: 0.05,
            triplets_per_anchor: 1,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return Err(Error::InvalidConfig("margin must lie in (0, 2]".into()));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig("noise_sigma must be positive".into()));
        }
        if self.triplets_per_anchor == 0 {
            return Err(Error::InvalidConfig("triplets_per_anchor must be positive".into()));
        }
        Ok(())
    }
}

/// Anchor with a perturbed positive and a negative from another receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Sequence,
    pub positive: Sequence,
    pub negative: Sequence,
    /// The negative was synthesized from the anchor because the pool held
    /// no sequence from another receiver.
    pub synthetic: bool,
}

/// Mean squared error over the elements of valid rows.
pub fn mse_loss(x: &Matrix, x_hat: &Matrix, mask: &[bool]) -> Result<f64> {
    check_mse(x, x_hat, mask)?;
    let mut sum = 0.0;
    let mut rows = 0usize;
    for (t, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        rows += 1;
        sum += x
            .row(t)
            .iter()
            .zip(x_hat.row(t))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(sum / (rows * x.cols()) as f64)
}

/// Gradient of `scale * mse_loss` w.r.t. `x_hat` (zero on padded rows).
pub fn mse_loss_grad(x: &Matrix, x_hat: &Matrix, mask: &[bool], scale: f64) -> Result<Matrix> {
    check_mse(x, x_hat, mask)?;
    let rows = mask.iter().filter(|m| **m).count();
    let k = 2.0 * scale / (rows * x.cols()) as f64;
    let mut d = Matrix::zeros(x.rows(), x.cols());
    for (t, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for ((o, a), b) in d.row_mut(t).iter_mut().zip(x_hat.row(t)).zip(x.row(t)) {
            *o = k * (a - b);
        }
    }
    Ok(d)
}

fn check_mse(x: &Matrix, x_hat: &Matrix, mask: &[bool]) -> Result<()> {
    check_dim("reconstruction rows", x.rows(), x_hat.rows())?;
    check_dim("reconstruction width", x.cols(), x_hat.cols())?;
    check_dim("mask length", x.rows(), mask.len())?;
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dimensions.
pub fn kl_loss(lp: &LatentParams) -> f64 {
    -0.5 * lp
        .mu
        .iter()
        .zip(&lp.log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - exp(*lv))
        .sum::<f64>()
}

/// `(d/dmu, d/dlog_var)` of [`kl_loss`].
pub fn kl_loss_grad(lp: &LatentParams) -> (Vec<f64>, Vec<f64>) {
    let dmu = lp.mu.clone();
    let dlv = lp.log_var.iter().map(|lv| 0.5 * (exp(*lv) - 1.0)).collect();
    (dmu, dlv)
}

/// Cosine similarity with norms floored at [`NORM_FLOOR`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let na = sqrt(dot(a, a)).max(NORM_FLOOR);
    let nb = sqrt(dot(b, b)).max(NORM_FLOOR);
    dot(a, b) / (na * nb)
}

/// Cosine similarity and its gradients w.r.t. `a` and `b`.
pub fn cosine_sim_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let ra = sqrt(dot(a, a));
    let rb = sqrt(dot(b, b));
    let na = ra.max(NORM_FLOOR);
    let nb = rb.max(NORM_FLOOR);
    let c = dot(a, b) / (na * nb);
    // the norm only varies with the vector above the floor
    let sa = if ra > NORM_FLOOR { c / (ra * ra) } else { 0.0 };
    let sb = if rb > NORM_FLOOR { c / (rb * rb) } else { 0.0 };
    let da = a.iter().zip(b).map(|(ai, bi)| bi / (na * nb) - sa * ai).collect();
    let db = b.iter().zip(a).map(|(bi, ai)| ai / (na * nb) - sb * bi).collect();
    (c, da, db)
}

/// Pair label of the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// `y = 0`: pulled together.
    Similar,
    /// `y = 1`: pushed at least `margin` apart in cosine distance.
    Dissimilar,
}

/// `(1 - C)^2` for similar pairs, `max(0, m - (1 - C))^2` for dissimilar.
pub fn contrastive_term(anchor: &[f64], other: &[f64], kind: PairKind, margin: f64) -> f64 {
    let c = cosine_sim(anchor, other);
    match kind {
        PairKind::Similar => (1.0 - c) * (1.0 - c),
        PairKind::Dissimilar => {
            let r = (margin - (1.0 - c)).max(0.0);
            r * r
        }
    }
}

/// [`contrastive_term`] and its gradients w.r.t. both representations.
pub fn contrastive_term_grad(anchor: &[f64], other: &[f64], kind: PairKind, margin: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (c, mut da, mut db) = cosine_sim_grad(anchor, other);
    let (value, dc) = match kind {
        PairKind::Similar => ((1.0 - c) * (1.0 - c), -2.0 * (1.0 - c)),
        PairKind::Dissimilar => {
            let r = margin - (1.0 - c);
            if r > 0.0 {
                (r * r, 2.0 * r)
            } else {
                (0.0, 0.0)
            }
        }
    };
    da.iter_mut().for_each(|v| *v *= dc);
    db.iter_mut().for_each(|v| *v *= dc);
    (value, da, db)
}

/// `lambda_con * con + lambda_rec * rec + lambda_kl * kl`.
pub fn total_loss(rec: f64, kl: f64, con: f64, w: &LossWeights) -> f64 {
    w.lambda_con * con + w.lambda_rec * rec + w.lambda_kl * kl
}

fn perturb<R: Rng>(seq: &mut Sequence, sigma: f64, rng: &mut R) {
    let n = seq.valid_len();
    for t in 0..n {
        for v in seq.data.row_mut(t) {
            let e: f64 = rng.sample(StandardNormal);
            *v += sigma * e;
        }
    }
}

/// Builds `triplets_per_anchor` triplets per anchor, anchor by anchor.
///
/// Positives are the anchor plus i.i.d. `N(0, noise_sigma^2)` noise on valid
/// rows. Negatives are drawn uniformly from pool sequences of a different
/// receiver; when there are none, the anchor is perturbed with ten times the
/// noise and its valid rows shuffled, and the triplet is marked synthetic.
pub fn make_triplets(anchors: &[Sequence], pool: &[Sequence], cfg: &ContrastiveConfig, seed: u64) -> Result<Vec<Triplet>> {
    if anchors.is_empty() {
        return Err(Error::Empty("triplet anchors"));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
    }
    let (rows, cols) = (anchors[0].seq_len(), anchors[0].dim());
    for s in anchors.iter().chain(pool) {
        check_dim("triplet sequence length", rows, s.seq_len())?;
        check_dim("triplet feature width", cols, s.dim())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(anchors.len() * cfg.triplets_per_anchor);
    for anchor in anchors {
        let mut anchor = anchor.clone();
        anchor.label = None;
        let candidates: Vec<&Sequence> = pool.iter().filter(|s| s.receiver != anchor.receiver).collect();
        for _ in 0..cfg.triplets_per_anchor {
            let mut positive = anchor.clone();
            perturb(&mut positive, cfg.noise_sigma, &mut rng);
            let (negative, synthetic) = if candidates.is_empty() {
                let mut neg = anchor.clone();
                perturb(&mut neg, 10.0 * cfg.noise_sigma, &mut rng);
                let n = neg.valid_len();
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    if i != j {
                        let a = neg.data.row(i).to_vec();
                        let b = neg.data.row(j).to_vec();
                        neg.data.row_mut(i).copy_from_slice(&b);
                        neg.data.row_mut(j).copy_from_slice(&a);
                    }
                }
                (neg, true)
            } else {
                let mut neg = candidates[rng.random_range(0..candidates.len())].clone();
                neg.label = None;
                (neg, false)
            };
            out.push(Triplet {
                anchor: anchor.clone(),
                positive,
                negative,
                synthetic,
            });
        }
    }
    Ok(out)
}
