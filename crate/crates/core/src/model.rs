//! The model bundle: shared core plus per-domain adaptors and normalizers,
//! and the adaptor-wrapped forward/backward passes built on top of them.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;

use crate::adaptors::AdaptorPair;
use crate::adaptors::DomainId;
use crate::error::{check_dim, Error, Result};
use crate::flow::{Normalizer, Sequence};
use crate::math::Matrix;
use crate::net::{GroupId, Grads, ParameterStore, Values};
use crate::objectives::mse_loss;
use crate::vae::{sample_latent, CoreConfig, DecoderTrace, EncoderTrace, LatentParams, SeqVae};

/// Current bundle/checkpoint format version.
pub const FORMAT_VERSION: u32 = 1;

/// Name of the parameter group holding the shared core.
pub const CORE_GROUP: &str = "core";

/// Which objective a bundle is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelKind {
    /// Reconstruction + KL + cosine contrastive over triplets.
    CtalVae,
    /// Reconstruction + KL.
    Vae,
    /// Reconstruction only, deterministic latent.
    Ae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::CtalVae, ModelKind::Vae, ModelKind::Ae];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::CtalVae => "ctal_vae",
            ModelKind::Vae => "vae",
            ModelKind::Ae => "ae",
        }
    }

    pub fn samples_latent(self) -> bool {
        !matches!(self, ModelKind::Ae)
    }

    pub fn uses_kl(self) -> bool {
        !matches!(self, ModelKind::Ae)
    }

    pub fn uses_contrastive(self) -> bool {
        matches!(self, ModelKind::CtalVae)
    }
}

/// All trainable state of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub version: u32,
    pub kind: ModelKind,
    pub store: ParameterStore,
    pub core_group: GroupId,
    pub vae: SeqVae,
    pub adaptors: Vec<AdaptorPair>,
    pub normalizers: BTreeMap<DomainId, Normalizer>,
}

impl ModelBundle {
    /// A bundle with zero-valued core parameters and no domains.
    pub fn new(kind: ModelKind, config: CoreConfig) -> Result<Self> {
        let mut store = ParameterStore::new();
        let core_group = store.add_group(CORE_GROUP)?;
        let vae = SeqVae::register(&mut store, core_group, config)?;
        Ok(Self {
            version: FORMAT_VERSION,
            kind,
            store,
            core_group,
            vae,
            adaptors: Vec::new(),
            normalizers: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.vae.config
    }

    pub fn init_core<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.vae.init(&mut self.store, rng);
    }

    /// Registers a zero-valued adaptor pair for a new domain.
    pub fn add_domain(&mut self, domain: DomainId, domain_dim: usize) -> Result<AdaptorPair> {
        if self.adaptors.iter().any(|a| a.domain == domain) {
            return Err(Error::Duplicate(domain.to_string()));
        }
        let pair = AdaptorPair::register(&mut self.store, domain, domain_dim, self.vae.config.core_dim)?;
        self.adaptors.push(pair.clone());
        Ok(pair)
    }

    pub fn adaptor(&self, domain: &DomainId) -> Result<&AdaptorPair> {
        self.adaptors
            .iter()
            .find(|a| &a.domain == domain)
            .ok_or_else(|| Error::UnknownDomain(domain.to_string()))
    }

    pub fn set_normalizer(&mut self, domain: DomainId, normalizer: Normalizer) -> Result<()> {
        let pair = self.adaptor(&domain)?;
        check_dim("normalizer width", pair.domain_dim, normalizer.dim())?;
        normalizer.validate()?;
        self.normalizers.insert(domain, normalizer);
        Ok(())
    }

    pub fn normalizer(&self, domain: &DomainId) -> Option<&Normalizer> {
        self.normalizers.get(domain)
    }

    /// Core parameters as little-endian f32, in store order.
    pub fn core_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for id in self.store.ids_in_group(self.core_group) {
            for v in self.store.value(id) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Adaptor-wrapped encode / sample / decode for one sequence.
    pub fn reconstruct(&self, domain: &DomainId, seq: &Sequence, eps: &[f64]) -> Result<(Matrix, LatentParams)> {
        let pair = self.adaptor(domain)?;
        Net::new(&self.vae, pair).reconstruct(self.store.values(), seq, eps)
    }

    /// Masked reconstruction error of each sequence, using the posterior
    /// mean as latent code. Order follows the input.
    pub fn score(&self, domain: &DomainId, sequences: &[Sequence]) -> Result<Vec<f64>> {
        let pair = self.adaptor(domain)?;
        let net = Net::new(&self.vae, pair);
        let p = self.store.values();
        sequences.iter().map(|s| net.score(p, s)).collect()
    }
}

/// The shared core viewed through one domain's adaptors.
#[derive(Debug, Clone, Copy)]
pub struct Net<'a> {
    pub vae: &'a SeqVae,
    pub pair: &'a AdaptorPair,
}

/// Forward record of an adaptor-wrapped encoder pass.
#[derive(Debug, Clone)]
pub struct EncodePass {
    enc: EncoderTrace,
}

/// Forward record of an adaptor-wrapped decoder pass.
#[derive(Debug, Clone)]
pub struct DecodePass {
    core_out: Matrix,
    dec: DecoderTrace,
}

impl<'a> Net<'a> {
    pub fn new(vae: &'a SeqVae, pair: &'a AdaptorPair) -> Self {
        Self { vae, pair }
    }

    fn check(&self, seq: &Sequence) -> Result<()> {
        check_dim("sequence feature width", self.pair.domain_dim, seq.dim())?;
        check_dim("sequence mask", seq.seq_len(), seq.mask.len())
    }

    pub fn encode(&self, p: Values<'_>, seq: &Sequence) -> Result<LatentParams> {
        self.check(seq)?;
        let adapted = self.pair.adapt_in_seq(p, &seq.data, &seq.mask)?;
        self.vae.encode(p, &adapted, &seq.mask)
    }

    pub fn decode(&self, p: Values<'_>, z: &[f64], seq_len: usize) -> Result<Matrix> {
        let core_out = self.vae.decode(p, z, seq_len)?;
        self.pair.adapt_out_seq(p, &core_out)
    }

    pub fn reconstruct(&self, p: Values<'_>, seq: &Sequence, eps: &[f64]) -> Result<(Matrix, LatentParams)> {
        let lp = self.encode(p, seq)?;
        let z = sample_latent(&lp, eps)?;
        Ok((self.decode(p, &z, seq.seq_len())?, lp))
    }

    pub fn score(&self, p: Values<'_>, seq: &Sequence) -> Result<f64> {
        let lp = self.encode(p, seq)?;
        let x_hat = self.decode(p, &lp.mu, seq.seq_len())?;
        mse_loss(&seq.data, &x_hat, &seq.mask)
    }

    pub fn encode_traced(&self, p: Values<'_>, seq: &Sequence) -> Result<(LatentParams, EncodePass)> {
        self.check(seq)?;
        let adapted = self.pair.adapt_in_seq(p, &seq.data, &seq.mask)?;
        let (lp, enc) = self.vae.encode_traced(p, &adapted, &seq.mask)?;
        Ok((lp, EncodePass { enc }))
    }

    pub fn encode_backward(
        &self,
        p: Values<'_>,
        g: &mut Grads<'_>,
        seq: &Sequence,
        pass: &EncodePass,
        dmu: &[f64],
        dlog_var: &[f64],
    ) {
        let dcore = self.vae.encode_backward(p, g, &pass.enc, dmu, dlog_var);
        self.pair.backward_in_seq(p, g, &seq.data, &seq.mask, &dcore);
    }

    pub fn decode_traced(&self, p: Values<'_>, z: &[f64], seq_len: usize) -> Result<(Matrix, DecodePass)> {
        let (core_out, dec) = self.vae.decode_traced(p, z, seq_len)?;
        let x_hat = self.pair.adapt_out_seq(p, &core_out)?;
        Ok((x_hat, DecodePass { core_out, dec }))
    }

    /// Returns the gradient w.r.t. the latent code.
    pub fn decode_backward(&self, p: Values<'_>, g: &mut Grads<'_>, pass: &DecodePass, dx_hat: &Matrix) -> Vec<f64> {
        let dcore = self.pair.backward_out_seq(p, g, &pass.core_out, dx_hat);
        self.vae.decode_backward(p, g, &pass.dec, &dcore)
    }
}
