//! Deterministic synthetic flow domains with injected attack runs.
//!
//! Each receiver's benign traffic is a mixture of a few shared latent
//! factors, each an AR(1) process plus a sinusoidal seasonal term, seen
//! through a domain-specific loading matrix, offset by a per-receiver level
//! and perturbed by idiosyncratic noise. Features are split into three
//! families: rate-like, categorical-proxy and byte-volume.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::flow::{FlowRecord, Label};
use crate::math::sqrt;

/// Attack families the generator can inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AnomalyKind {
    /// Additive spike on rate-like features.
    Burst,
    /// High-variance categorical-proxy features.
    Scan,
    /// Sustained level shift on byte-volume features.
    Exfil,
}

/// Benign process parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BenignRegime {
    /// Mean AR(1) coefficient; each receiver jitters it by up to 0.1.
    pub ar_coef: f64,
    /// Standard deviation of per-receiver feature levels.
    pub level_spread: f64,
    /// Stationary standard deviation of each latent factor.
    pub noise_scale: f64,
    /// Mean seasonal period in flows; each receiver scales it by 0.75..1.25.
    pub seasonal_period: f64,
    pub seasonal_amplitude: f64,
    pub factors: usize,
}

impl Default for BenignRegime {
    fn default() -> Self {
        Self {
            ar_coef: 0.8,
            level_spread: 1.0,
            noise_scale: 0.5,
            seasonal_period: 24.0,
            seasonal_amplitude: 1.0,
            factors: 3,
        }
    }
}

/// Injected attack parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AnomalySpec {
    /// Target fraction of anomalous flows, in `[0, 1)`.
    pub fraction: f64,
    pub kinds: Vec<AnomalyKind>,
    /// Effect size in units of each feature's within-receiver scale.
    pub magnitude: f64,
    /// Length of each contiguous anomalous run, in flows.
    pub run_length: usize,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            fraction: 0.07,
            kinds: vec![AnomalyKind::Burst, AnomalyKind::Scan, AnomalyKind::Exfil],
            magnitude: 4.0,
            run_length: 20,
        }
    }
}

/// Shape and randomness of one synthetic domain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DomainSpec {
    pub feature_dim: usize,
    pub receivers: usize,
    pub flows_per_receiver: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub benign: BenignRegime,
    #[cfg_attr(feature = "serde", serde(default))]
    pub anomaly: AnomalySpec,
    /// Leading flows of every receiver that never carry an attack.
    #[cfg_attr(feature = "serde", serde(default = "default_clean_prefix"))]
    pub clean_prefix: usize,
    pub seed: u64,
}

fn default_clean_prefix() -> usize {
    30
}

impl DomainSpec {
    /// Attack-free source domain: 12 features, 8 receivers, 6,000 flows.
    pub fn source_default() -> Self {
        Self {
            feature_dim: 12,
            receivers: 8,
            flows_per_receiver: 750,
            benign: BenignRegime::default(),
            anomaly: AnomalySpec {
                fraction: 0.0,
                ..AnomalySpec::default()
            },
            clean_prefix: default_clean_prefix(),
            seed: 11,
        }
    }

    /// Target domain: 8 features, 6 receivers, about 4,000 flows, 7% attacks.
    pub fn target_default() -> Self {
        Self {
            feature_dim: 8,
            receivers: 6,
            flows_per_receiver: 667,
            benign: BenignRegime {
                ar_coef: 0.6,
                seasonal_period: 16.0,
                ..BenignRegime::default()
            },
            anomaly: AnomalySpec::default(),
            clean_prefix: default_clean_prefix(),
            seed: 23,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn total_flows(&self) -> usize {
        self.receivers * self.flows_per_receiver
    }

    /// Number of injected runs.
    pub fn anomaly_runs(&self) -> usize {
        let a = &self.anomaly;
        libm::round(a.fraction * self.total_flows() as f64 / a.run_length.max(1) as f64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let (b, a) = (&self.benign, &self.anomaly);
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2");
        }
        if self.receivers == 0 || self.flows_per_receiver == 0 || b.factors == 0 || a.run_length == 0 {
            return bad("receivers, flows_per_receiver, factors and run_length must be positive");
        }
        if !(0.0..1.0).contains(&a.fraction) {
            return bad("anomaly fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&b.ar_coef) {
            return bad("ar_coef must lie in [0, 1)");
        }
        if !(b.seasonal_period > 0.0) {
            return bad("seasonal_period must be positive");
        }
        let finite = [b.level_spread, b.noise_scale, b.seasonal_amplitude, a.magnitude];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("scales and magnitude must be finite and non-negative");
        }
        if a.fraction > 0.0 && a.kinds.is_empty() {
            return bad("anomaly kinds must be non-empty when fraction > 0");
        }
        let runs = self.anomaly_runs();
        let slots = self.flows_per_receiver.saturating_sub(self.clean_prefix) / a.run_length;
        if runs > slots * self.receivers {
            return bad("anomaly runs do not fit after the clean prefix");
        }
        Ok(())
    }
}

struct Receiver {
    phi: f64,
    level: Vec<f64>,
    period: f64,
    phase: f64,
    mean_gap: f64,
    t0: f64,
}

/// Feature index ranges of the rate-like, categorical-proxy and byte-volume
/// families.
pub fn feature_families(dim: usize) -> [core::ops::Range<usize>; 3] {
    let a = (dim / 3).max(1);
    let b = (2 * dim / 3).max(a + 1).min(dim);
    [0..a, a..b, b..dim]
}

/// Generates a domain's flows, sorted by timestamp, and the per-flow truth.
pub fn generate_domain(spec: &DomainSpec) -> Result<(Vec<FlowRecord>, Vec<Label>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, k) = (spec.feature_dim, spec.benign.factors);
    let b = &spec.benign;

    let inv_sqrt_k = 1.0 / sqrt(k as f64);
    let loadings: Vec<f64> = (0..d * k)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * inv_sqrt_k)
        .collect();
    let idio = 0.2 * b.noise_scale;
    let factor_var = b.noise_scale * b.noise_scale + 0.5 * b.seasonal_amplitude * b.seasonal_amplitude;
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let l2: f64 = loadings[j * k..(j + 1) * k].iter().map(|l| l * l).sum();
            sqrt(l2 * factor_var + idio * idio).max(1e-6)
        })
        .collect();

    let receivers: Vec<Receiver> = (0..spec.receivers)
        .map(|_| Receiver {
            phi: (b.ar_coef + rng.random_range(-0.1..0.1)).clamp(0.0, 0.99),
            level: (0..d)
                .map(|_| b.level_spread * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            period: b.seasonal_period * rng.random_range(0.75..1.25),
            phase: rng.random_range(0.0..2.0 * PI),
            mean_gap: rng.random_range(0.5..2.0),
            t0: rng.random_range(0.0..10.0),
        })
        .collect();

    let n = spec.flows_per_receiver;
    let mut values = vec![0.0; spec.receivers * n * d];
    let mut stamps = vec![0.0; spec.receivers * n];
    for (r, rc) in receivers.iter().enumerate() {
        let innov = b.noise_scale * sqrt(1.0 - rc.phi * rc.phi);
        let mut f: Vec<f64> = (0..k)
            .map(|_| b.noise_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gaps = Exp::new(1.0 / rc.mean_gap).map_err(|_| Error::InvalidConfig("inter-arrival rate".into()))?;
        let mut t = rc.t0;
        for i in 0..n {
            t += gaps.sample(&mut rng);
            stamps[r * n + i] = libm::round(t * 1000.0) / 1000.0;
            for fm in f.iter_mut() {
                *fm = rc.phi * *fm + innov * rng.sample::<f64, _>(StandardNormal);
            }
            let row = &mut values[(r * n + i) * d..(r * n + i + 1) * d];
            for (j, x) in row.iter_mut().enumerate() {
                let mut v = rc.level[j] + idio * rng.sample::<f64, _>(StandardNormal);
                for (m, fm) in f.iter().enumerate() {
                    let season =
                        b.seasonal_amplitude * libm::sin(2.0 * PI * i as f64 / rc.period + rc.phase + m as f64);
                    v += loadings[j * k + m] * (fm + season);
                }
                *x = v;
            }
        }
    }

    let mut labels = vec![Label::Benign; spec.receivers * n];
    let a = &spec.anomaly;
    let runs = spec.anomaly_runs();
    let families = feature_families(d);
    let free = n.saturating_sub(spec.clean_prefix) / a.run_length;
    // slot-aligned runs never overlap
    let mut slots: Vec<(usize, usize)> = (0..spec.receivers).flat_map(|r| (0..free).map(move |s| (r, s))).collect();
    for i in 0..runs {
        let pick = rng.random_range(i..slots.len());
        slots.swap(i, pick);
    }
    for (run, &(r, slot)) in slots.iter().take(runs).enumerate() {
        let kind = a.kinds[run % a.kinds.len()];
        let start = spec.clean_prefix + slot * a.run_length;
        let level = &receivers[r].level;
        for i in start..start + a.run_length {
            labels[r * n + i] = Label::Anomalous;
            let row = &mut values[(r * n + i) * d..(r * n + i + 1) * d];
            match kind {
                AnomalyKind::Burst => {
                    for j in families[0].clone() {
                        let jitter = 1.0 + 0.25 * libm::fabs(rng.sample::<f64, _>(StandardNormal));
                        row[j] += a.magnitude * scale[j] * jitter;
                    }
                }
                AnomalyKind::Scan => {
                    for j in families[1].clone() {
                        row[j] = level[j] + a.magnitude * scale[j] * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                AnomalyKind::Exfil => {
                    for j in families[2].clone() {
                        row[j] += 0.75 * a.magnitude * scale[j];
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..spec.receivers * n).collect();
    order.sort_by(|&x, &y| stamps[x].total_cmp(&stamps[y]));
    let mut src_of = vec![0u32; spec.receivers];
    for s in src_of.iter_mut() {
        *s = rng.random_range(1..=250);
    }
    let flows = order
        .iter()
        .map(|&idx| {
            let r = idx / n;
            FlowRecord::new(
                stamps[idx],
                format!("10.0.{}.{}", r, src_of[r] + (idx % 4) as u32),
                format!("192.168.1.{}", r + 1),
                values[idx * d..(idx + 1) * d].to_vec(),
            )
        })
        .collect();
    let labels = order.iter().map(|&idx| labels[idx]).collect();
    Ok((flows, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::receiver_windows;

    fn small(fraction: f64) -> DomainSpec {
        DomainSpec {
            feature_dim: 5,
            receivers: 4,
            flows_per_receiver: 250,
            benign: BenignRegime::default(),
            anomaly: AnomalySpec {
                fraction,
                ..AnomalySpec::default()
            },
            clean_prefix: 30,
            seed: 7,
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_domain(&small(0.07)).unwrap();
        let b = generate_domain(&small(0.07)).unwrap();
        assert_eq!(a, b);
        let c = generate_domain(&small(0.07).with_seed(8)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_fraction_is_all_benign() {
        let (flows, labels) = generate_domain(&small(0.0)).unwrap();
        assert_eq!(flows.len(), 1000);
        assert!(labels.iter().all(|l| *l == Label::Benign));
    }

    #[test]
    fn anomaly_count_matches_run_quantization() {
        let spec = DomainSpec {
            receivers: 10,
            flows_per_receiver: 1000,
            ..small(0.07)
        };
        let (_, labels) = generate_domain(&spec).unwrap();
        let count = labels.iter().filter(|l| l.is_anomalous()).count() as i64;
        assert!((count - 700).abs() <= spec.anomaly.run_length as i64, "{count}");
    }

    #[test]
    fn clean_prefix_is_benign() {
        let spec = small(0.3);
        let (flows, labels) = generate_domain(&spec).unwrap();
        let windows = receiver_windows(&flows, spec.clean_prefix).unwrap();
        let mut seen = alloc::collections::BTreeSet::new();
        for w in windows {
            if seen.insert(w.receiver.clone()) {
                assert!(w.rows.iter().all(|&i| !labels[i].is_anomalous()));
            }
        }
        assert_eq!(seen.len(), spec.receivers);
    }

    #[test]
    fn sorted_by_time_and_receiver_count() {
        let (flows, _) = generate_domain(&small(0.07)).unwrap();
        assert!(flows.windows(2).all(|w| w[0].ts <= w[1].ts));
        let receivers: alloc::collections::BTreeSet<_> = flows.iter().map(|f| f.dst.clone()).collect();
        assert_eq!(receivers.len(), 4);
        assert!(flows.iter().all(|f| f.features.len() == 5));
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(0.07);
        s.feature_dim = 1;
        assert!(generate_domain(&s).is_err());
        let mut s = small(1.0);
        assert!(s.validate().is_err());
        s.anomaly.fraction = 0.9;
        assert!(s.validate().is_err());
    }

    #[test]
    fn families_cover_every_feature() {
        for d in 2..20 {
            let [a, b, c] = feature_families(d);
            assert_eq!((a.start, c.end), (0, d));
            assert_eq!(a.end, b.start);
            assert_eq!(b.end, c.start);
            assert!(!a.is_empty() && !b.is_empty());
        }
    }
}
