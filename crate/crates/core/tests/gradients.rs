use ctalvae_core::adaptors::DomainId;
use ctalvae_core::math::Matrix;
use ctalvae_core::net::grad_check;
use ctalvae_core::objectives::{make_triplets, ContrastiveConfig};
use ctalvae_core::model::Net;
use ctalvae_core::train::{batch_objective, TrainConfig};
use ctalvae_core::vae::CoreConfig;
use ctalvae_core::{ModelBundle, ModelKind, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DOMAIN_DIM: usize = 3;

fn tiny_bundle(kind: ModelKind, seed: u64) -> ModelBundle {
    let core = CoreConfig {
        core_dim: 5,
        hidden: 4,
        latent: 2,
        seq_len: 3,
    };
    let mut b = ModelBundle::new(kind, core).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    b.init_core(&mut rng);
    let pair = b.add_domain(DomainId::source(), DOMAIN_DIM).unwrap();
    pair.init(&mut b.store, &mut rng);
    b
}

fn sequences(seed: u64) -> Vec<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|i| {
            let valid = if i == 2 { 2 } else { 3 };
            let mut data = Matrix::zeros(3, DOMAIN_DIM);
            let mut mask = vec![false; 3];
            for t in 0..valid {
                for v in data.row_mut(t) {
                    *v = rng.sample(StandardNormal);
                }
                mask[t] = true;
            }
            Sequence {
                receiver: format!("r{i}"),
                start_ts: i as f64,
                data,
                mask,
                label: None,
            }
        })
        .collect()
}

fn check(kind: ModelKind, synthetic_negatives: bool) -> f64 {
    let mut bundle = tiny_bundle(kind, 3);
    let anchors = sequences(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps: Vec<Vec<f64>> = (0..anchors.len())
        .map(|_| (0..2).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut cfg = TrainConfig::default();
    cfg.weights.lambda_rec = 1.0;
    cfg.weights.lambda_kl = 0.3;
    cfg.weights.lambda_con = 2.0;
    // a wide margin keeps the dissimilar hinge active
    cfg.contrastive = ContrastiveConfig {
        margin: 1.5,
        noise_sigma: 0.3,
        triplets_per_anchor: 2,
    };
    let pool = if synthetic_negatives { &anchors[..1] } else { &anchors[..] };
    let triplets = if kind == ModelKind::CtalVae {
        make_triplets(&anchors, pool, &cfg.contrastive, 6).unwrap()
    } else {
        Vec::new()
    };
    let ModelBundle {
        store, vae, adaptors, ..
    } = &mut bundle;
    let net = Net::new(vae, &adaptors[0]);
    grad_check(
        store,
        |store| {
            let (p, mut g) = store.split();
            batch_objective(
                net,
                p,
                &mut g,
                kind,
                &anchors,
                &eps,
                &triplets,
                &cfg.weights,
                cfg.contrastive.margin,
            )
            .unwrap()
            .total
        },
        150,
        1e-5,
        7,
    )
    .unwrap()
}

#[test]
fn full_loss_gradient_ctal_vae() {
    let worst = check(ModelKind::CtalVae, false);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn full_loss_gradient_with_synthetic_negatives() {
    let worst = check(ModelKind::CtalVae, true);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn full_loss_gradient_vae() {
    let worst = check(ModelKind::Vae, false);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn full_loss_gradient_ae() {
    let worst = check(ModelKind::Ae, false);
    assert!(worst < 1e-4, "{worst}");
}
