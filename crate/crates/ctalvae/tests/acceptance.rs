//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to stderr, so the verdicts show up even when output is captured.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ctalvae::checkpoint;
use ctalvae::cli::run_cli;
use ctalvae::config::RunConfig;
use ctalvae::report::{run_benchmark, REPORT_JSON};
use ctalvae_core::adaptors::DomainId;
use ctalvae_core::bench::{prepare_seed, BenchSettings};
use ctalvae_core::flow::{build_sequences, fit_normalizer};
use ctalvae_core::math::Matrix;
use ctalvae_core::metrics::evaluate;
use ctalvae_core::model::Net;
use ctalvae_core::net::grad_check;
use ctalvae_core::objectives::{
    contrastive_term, cosine_sim, kl_loss, make_triplets, mse_loss, ContrastiveConfig, PairKind,
};
use ctalvae_core::synth::DomainSpec;
use ctalvae_core::train::{adapt_target, batch_objective, score, train_source, TrainConfig};
use ctalvae_core::vae::{sample_latent, CoreConfig, LatentParams};
use ctalvae_core::{FlowRecord, Label, ModelBundle, ModelKind, Normalizer, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[criterion {id:>2}] {status} {name}: {detail}");
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Antithetic Monte-Carlo estimate of E_q[log q(z) - log p(z)].
fn monte_carlo_kl(lp: &LatentParams, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples / 2 {
        for (m, lv) in lp.mu.iter().zip(&lp.log_var) {
            let e = normal(rng);
            let s = (0.5 * lv).exp();
            for z in [m + s * e, m - s * e] {
                acc += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
            }
        }
    }
    acc / (2 * (samples / 2)) as f64
}

#[test]
fn criterion_01_loss_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=8);
        let lp = LatentParams {
            mu: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            log_var: (0..d).map(|_| 2.0 * rng.random_range(0.5f64..1.5).ln()).collect(),
        };
        let est = monte_carlo_kl(&lp, 1_000_000, &mut rng);
        worst = worst.max((est - kl_loss(&lp)).abs());
    }

    let r = 0.5f64.sqrt();
    let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]);
    let x_hat = Matrix::from_rows(&[[0.0, 2.0], [3.0, 6.0], [0.0, 0.0]]);
    let fixtures = [
        (
            kl_loss(&LatentParams {
                mu: vec![0.0],
                log_var: vec![4f64.ln()],
            }),
            0.5 * (3.0 - 4f64.ln()),
        ),
        (
            kl_loss(&LatentParams {
                mu: vec![1.0, -2.0],
                log_var: vec![0.0, 0.0],
            }),
            2.5,
        ),
        (cosine_sim(&[1.0, 0.0], &[1.0, 1.0]), r),
        (cosine_sim(&[1.0, 2.0], &[-2.0, -4.0]), -1.0),
        (contrastive_term(&[1.0, 0.0], &[1.0, 1.0], PairKind::Similar, 0.5), (1.0 - r).powi(2)),
        (contrastive_term(&[1.0, 0.0], &[1.0, 1.0], PairKind::Dissimilar, 0.5), (0.5 - (1.0 - r)).powi(2)),
        (contrastive_term(&[1.0, 0.0], &[0.0, 3.0], PairKind::Dissimilar, 0.5), 0.0),
        (mse_loss(&x, &x_hat, &[true, true, false]).unwrap(), 1.25),
    ];
    let fixture_err = fixtures.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "loss oracles",
        worst < 1e-2 && fixture_err < 1e-12 && secs < 30.0,
        &format!("max |KL - MC| {worst:.2e}, max fixture error {fixture_err:.1e}, {secs:.1}s"),
    );
}

const TINY_DIM: usize = 3;

fn tiny_bundle(kind: ModelKind) -> ModelBundle {
    let core = CoreConfig {
        core_dim: 5,
        hidden: 4,
        latent: 2,
        seq_len: 3,
    };
    let mut b = ModelBundle::new(kind, core).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    b.init_core(&mut rng);
    let pair = b.add_domain(DomainId::source(), TINY_DIM).unwrap();
    pair.init(&mut b.store, &mut rng);
    b
}

fn tiny_sequences() -> Vec<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..3)
        .map(|i| {
            let valid = if i == 2 { 2 } else { 3 };
            let mut data = Matrix::zeros(3, TINY_DIM);
            for t in 0..valid {
                for v in data.row_mut(t) {
                    *v = normal(&mut rng);
                }
            }
            Sequence {
                receiver: format!("r{i}"),
                start_ts: i as f64,
                data,
                mask: (0..3).map(|t| t < valid).collect(),
                label: None,
            }
        })
        .collect()
}

#[test]
fn criterion_02_gradient_suite() {
    let start = Instant::now();
    let probes = 150;
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        let mut bundle = tiny_bundle(kind);
        let anchors = tiny_sequences();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps: Vec<Vec<f64>> = (0..anchors.len()).map(|_| vec![normal(&mut rng), normal(&mut rng)]).collect();
        let mut cfg = TrainConfig::default();
        cfg.weights.lambda_kl = 0.3;
        cfg.weights.lambda_con = 2.0;
        cfg.contrastive = ContrastiveConfig {
            margin: 1.5,
            noise_sigma: 0.3,
            triplets_per_anchor: 2,
        };
        let triplets = if kind.uses_contrastive() {
            make_triplets(&anchors, &anchors, &cfg.contrastive, 6).unwrap()
        } else {
            Vec::new()
        };
        let ModelBundle {
            store, vae, adaptors, ..
        } = &mut bundle;
        let net = Net::new(vae, &adaptors[0]);
        let err = grad_check(
            store,
            |store| {
                let (p, mut g) = store.split();
                batch_objective(net, p, &mut g, kind, &anchors, &eps, &triplets, &cfg.weights, cfg.contrastive.margin)
                    .unwrap()
                    .total
            },
            probes,
            1e-5,
            7,
        )
        .unwrap();
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "gradient suite",
        worst < 1e-4 && secs < 60.0,
        &format!("{probes} coordinates per kind, max relative error {worst:.2e}, {secs:.1}s"),
    );
}

fn small_domains() -> (DomainSpec, DomainSpec) {
    let source = DomainSpec {
        flows_per_receiver: 150,
        ..DomainSpec::source_default()
    };
    let target = DomainSpec {
        flows_per_receiver: 150,
        ..DomainSpec::target_default()
    };
    (source, target)
}

fn quick_settings(epochs: usize) -> BenchSettings {
    let mut s = BenchSettings::default();
    s.train.epochs = epochs;
    s.train.adapt_epochs = epochs;
    s
}

/// Checkpoint bytes of every array whose name starts with `prefix`.
fn region(bundle: &ModelBundle, prefix: &str) -> Vec<u8> {
    let bytes = checkpoint::to_bytes(bundle).unwrap();
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let base = 12 + header_len;
    let mut out = Vec::new();
    for a in checkpoint::header_of(bundle).arrays {
        if a.name.starts_with(prefix) {
            let start = base + a.offset as usize;
            let len = 4 * a.shape.iter().product::<usize>();
            out.extend_from_slice(&bytes[start..start + len]);
        }
    }
    out
}

#[test]
fn criterion_03_freeze_semantics() {
    let start = Instant::now();
    let (source, target) = small_domains();
    let same_width = DomainSpec {
        feature_dim: source.feature_dim,
        ..target.clone()
    };
    let mut cases = 0;
    let mut failures = Vec::new();
    for (target, label) in [(&target, "narrower target"), (&same_width, "equal-width target")] {
        for kind in ModelKind::ALL {
            for (epochs, lr) in [(3, 0.003), (8, 0.05)] {
                let mut s = quick_settings(epochs);
                s.train.lr = lr;
                let data = prepare_seed(&source, target, &s, 4).unwrap();
                let (bundle, _) =
                    train_source(kind, s.core, data.source_normalizer.clone(), &data.source_train, &s.train, 4)
                        .unwrap();
                let core_before = region(&bundle, "core.");
                let still = TrainConfig {
                    adapt_epochs: 1,
                    lr: 1e-300,
                    ..s.train
                };
                let (untouched, _) =
                    adapt_target(bundle.clone(), &data.shots, data.target_normalizer.clone(), &still, 4).unwrap();
                let (adapted, _) =
                    adapt_target(bundle, &data.shots, data.target_normalizer.clone(), &s.train, 4).unwrap();
                cases += 1;
                if region(&adapted, "core.") != core_before {
                    failures.push(format!("{label} {}: core bytes changed", kind.as_str()));
                }
                if region(&adapted, "adaptor.target.") == region(&untouched, "adaptor.target.") {
                    failures.push(format!("{label} {}: target adaptors unchanged", kind.as_str()));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = if failures.is_empty() {
        format!("{cases} configurations, core identical and target adaptors moved, {secs:.1}s")
    } else {
        failures.join("; ")
    };
    verdict(3, "freeze semantics", failures.is_empty() && secs < 60.0, &detail);
}

#[test]
fn criterion_04_reparameterization_statistics() {
    let lp = LatentParams {
        mu: vec![0.7, -1.2, 0.0, 2.5],
        log_var: vec![0.0, 0.5f64.ln(), 3f64.ln(), -2.0],
    };
    let n = 10_000;
    let d = lp.mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let eps: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            sample_latent(&lp, &eps).unwrap()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let var = lp.log_var[j].exp();
        let mean = draws.iter().map(|z| z[j]).sum::<f64>() / n as f64;
        let s2 = draws.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let z_mean = (mean - lp.mu[j]).abs() / (var / n as f64).sqrt();
        let z_var = (s2 - var).abs() / (var * (2.0 / (n - 1) as f64).sqrt());
        worst = worst.max(z_mean).max(z_var);
    }
    verdict(
        4,
        "reparameterization statistics",
        worst < 3.0,
        &format!("{n} draws, largest deviation {worst:.2} standard errors"),
    );
}

/// Groups flow indices by receiver with a straightforward stable sort.
fn reference_grouping(flows: &[FlowRecord], seq_len: usize) -> Vec<(String, Vec<usize>)> {
    let mut keys: Vec<&str> = flows.iter().map(|f| f.dst.as_str()).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for k in keys {
        let mut idx: Vec<usize> = (0..flows.len()).filter(|&i| flows[i].dst == k).collect();
        for i in 1..idx.len() {
            let mut j = i;
            while j > 0 && flows[idx[j - 1]].ts > flows[idx[j]].ts {
                idx.swap(j - 1, j);
                j -= 1;
            }
        }
        for c in idx.chunks(seq_len) {
            out.push((k.to_string(), c.to_vec()));
        }
    }
    out
}

#[test]
fn criterion_05_sequencer_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let receivers = rng.random_range(1..6);
        let span = rng.random_range(1..60);
        let seq_len = rng.random_range(1..40);
        let flows: Vec<FlowRecord> = (0..n)
            .map(|i| {
                let ts = rng.random_range(0..span) as f64;
                let r = rng.random_range(0..receivers);
                FlowRecord::new(ts, "src", format!("10.1.{r}.1"), vec![i as f64, ts])
            })
            .collect();
        let seqs = build_sequences(&flows, &Normalizer::identity(2), seq_len).unwrap();
        let reference = reference_grouping(&flows, seq_len);
        let mut seen = vec![0usize; n];
        let mut ok = seqs.len() == reference.len();
        for (s, (receiver, rows)) in seqs.iter().zip(&reference) {
            ok &= &s.receiver == receiver && s.valid_len() == rows.len();
            for t in 0..seq_len {
                if s.mask[t] {
                    let i = s.data.row(t)[0] as usize;
                    seen[i] += 1;
                    ok &= t < rows.len() && rows[t] == i && flows[i].dst == s.receiver;
                } else {
                    ok &= s.data.row(t).iter().all(|v| *v == 0.0);
                }
            }
        }
        ok &= seen.iter().all(|c| *c == 1);
        if !ok {
            failures += 1;
        }
    }
    verdict(
        5,
        "sequencer partition",
        failures == 0,
        &format!("1000 random fixtures, {failures} mismatches against the reference grouping"),
    );
}

#[test]
fn criterion_06_metric_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let label = |b: bool| if b { Label::Anomalous } else { Label::Benign };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let p_truth = rng.random_range(0.0..1.0);
        let p_pred = rng.random_range(0.0..1.0);
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(p_truth)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(p_pred)).collect();
        let m = evaluate(
            &pred.iter().map(|b| label(*b)).collect::<Vec<_>>(),
            &truth.iter().map(|b| label(*b)).collect::<Vec<_>>(),
        )
        .unwrap();
        let count = |p: bool, t: bool| pred.iter().zip(&truth).filter(|(a, b)| **a == p && **b == t).count() as f64;
        let (tp, tn, fp, fn_) = (count(true, true), count(false, false), count(true, false), count(false, true));
        let accuracy = (tp + tn) / n as f64;
        let sensitivity = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        let mcc = if denom == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / denom.sqrt() };
        let same = m.tp as f64 == tp
            && m.tn as f64 == tn
            && m.fp as f64 == fp
            && m.fn_ as f64 == fn_
            && m.accuracy == accuracy
            && m.sensitivity == sensitivity
            && m.mcc == mcc;
        if !same {
            mismatches += 1;
        }
    }
    // tp 2, tn 1, fp 0, fn 1
    let pred = [Label::Anomalous, Label::Anomalous, Label::Benign, Label::Benign];
    let truth = [Label::Anomalous, Label::Anomalous, Label::Anomalous, Label::Benign];
    let mcc = evaluate(&pred, &truth).unwrap().mcc;
    let fixture_err = (mcc - 2.0 / 12f64.sqrt()).abs();
    verdict(
        6,
        "metric correctness",
        mismatches == 0 && fixture_err < 1e-10,
        &format!("1000 random vectors, {mismatches} mismatches; MCC fixture {mcc:.10} (error {fixture_err:.1e})"),
    );
}

#[test]
fn criterion_07_overfit_sanity() {
    let source = DomainSpec::source_default();
    let (flows, _) = ctalvae_core::synth::generate_domain(&source).unwrap();
    let norm = fit_normalizer(&flows).unwrap();
    let core = BenchSettings::desk_core();
    let seq = build_sequences(&flows, &norm, core.seq_len).unwrap().remove(0);
    let cfg = TrainConfig {
        epochs: 200,
        lr: 0.01,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let (bundle, trace) = train_source(ModelKind::Ae, core, norm, std::slice::from_ref(&seq), &cfg, 7).unwrap();
    let initial = trace[0].rec;
    let fin = score(&bundle, &DomainId::source(), &[seq]).unwrap()[0];
    let ratio = fin / initial;
    verdict(
        7,
        "overfit sanity",
        ratio < 0.1,
        &format!("masked MSE {initial:.4} -> {fin:.4} after 200 steps ({:.1}% of initial)", 100.0 * ratio),
    );
}

#[test]
fn criterion_08_benchmark_ordering() {
    let cfg = RunConfig::default();
    let start = Instant::now();
    let report = run_benchmark(&cfg.source, &cfg.target, &cfg.bench_settings(), &cfg.seeds).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ctal = report.median_of(ModelKind::CtalVae).unwrap();
    let vae = report.median_of(ModelKind::Vae).unwrap();
    let ae = report.median_of(ModelKind::Ae).unwrap();
    let ok = ctal.mcc >= vae.mcc
        && vae.mcc >= ae.mcc
        && ctal.sensitivity >= vae.sensitivity
        && ctal.sensitivity >= ae.sensitivity
        && ctal.accuracy >= vae.accuracy
        && ctal.accuracy >= ae.accuracy
        && ae.sensitivity <= vae.sensitivity
        && secs < 600.0;
    let fmt = |m: &ctalvae::report::ModelSummary| {
        format!(
            "{} acc {:.3} mcc {:.3} sens {:.3}",
            m.kind.as_str(),
            m.accuracy,
            m.mcc,
            m.sensitivity
        )
    };
    verdict(
        8,
        "benchmark ordering",
        ok,
        &format!("seeds {:?}: {} | {} | {} ({secs:.0}s)", cfg.seeds, fmt(ctal), fmt(vae), fmt(ae)),
    );
}

fn bench_via_cli(config: &Path, out: &Path) -> String {
    let code = run_cli([
        "ctalvae",
        "--config",
        config.to_str().unwrap(),
        "bench",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join(REPORT_JSON)).unwrap();
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"runtime_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let mut cfg = RunConfig::default();
    cfg.seeds = vec![1, 2];
    cfg.train.epochs = 10;
    cfg.train.adapt_epochs = 10;
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let a = bench_via_cli(&config, &dir.path().join("a"));
    let b = bench_via_cli(&config, &dir.path().join("b"));
    verdict(
        9,
        "determinism",
        a == b,
        &format!("two bench runs, report.json ({} bytes without runtime) identical: {}", a.len(), a == b),
    );
}

#[test]
fn criterion_10_checkpoint_round_trip() {
    let (source, target) = small_domains();
    let s = quick_settings(5);
    let data = prepare_seed(&source, &target, &s, 3).unwrap();
    let (bundle, _) = train_source(
        ModelKind::CtalVae,
        s.core,
        data.source_normalizer.clone(),
        &data.source_train,
        &s.train,
        3,
    )
    .unwrap();
    let (bundle, _) = adapt_target(bundle, &data.shots, data.target_normalizer.clone(), &s.train, 3).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    checkpoint::save(&bundle, &first).unwrap();
    let loaded = checkpoint::load(&first).unwrap();
    checkpoint::save(&loaded, &second).unwrap();
    let identical = std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();

    let mut worst: f64 = 0.0;
    for (domain, seqs) in [(DomainId::source(), &data.source_holdout), (DomainId::target(), &data.eval)] {
        let a = score(&bundle, &domain, seqs).unwrap();
        let b = score(&loaded, &domain, seqs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs() / x.abs().max(1e-12));
        }
    }
    verdict(
        10,
        "checkpoint round trip",
        identical && worst < 1e-5,
        &format!("re-saved bytes identical: {identical}; max relative score difference {worst:.2e}"),
    );
}
