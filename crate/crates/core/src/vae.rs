//! The shared sequence VAE: LSTM encoder to a diagonal Gaussian posterior,
//! reparameterized sampling, and an autoregressive LSTM decoder that feeds
//! back its own previous emission.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::{exp, Matrix};
use crate::net::{Affine, GroupId, Grads, LstmCache, LstmCell, LstmState, ParamId, ParameterStore, Values};

/// Dimensions of the shared core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CoreConfig {
    /// Per-step input size of the encoder and emission size of the decoder.
    pub core_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub seq_len: usize,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            core_dim: 43,
            hidden: 64,
            latent: 16,
            seq_len: 30,
        }
    }
}

impl CoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.core_dim == 0 || self.hidden == 0 || self.latent == 0 || self.seq_len == 0 {
            return Err(Error::InvalidConfig("core dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// `z = mu + exp(log_var / 2) * eps`.
pub fn sample_latent(lp: &LatentParams, eps: &[f64]) -> Result<Vec<f64>> {
    check_dim("latent noise", lp.mu.len(), eps.len())?;
    Ok(lp
        .mu
        .iter()
        .zip(&lp.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + exp(0.5 * lv) * e)
        .collect())
}

/// Backward of [`sample_latent`]: returns `(dmu, dlog_var)` for `dz`.
pub fn sample_latent_backward(lp: &LatentParams, eps: &[f64], dz: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dlv = lp
        .log_var
        .iter()
        .zip(eps)
        .zip(dz)
        .map(|((lv, e), d)| d * e * 0.5 * exp(0.5 * lv))
        .collect();
    (dz.to_vec(), dlv)
}

/// Number of leading valid rows; errors on an all-padding mask.
pub fn mask_len(mask: &[bool]) -> Result<usize> {
    match mask.iter().take_while(|m| **m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

/// Forward record of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    caches: Vec<LstmCache>,
    h_last: Vec<f64>,
    rows: usize,
}

/// Forward record of one decoder pass.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    z: Vec<f64>,
    caches: Vec<LstmCache>,
    hs: Vec<Vec<f64>>,
}

/// Parameter handles of the shared core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqVae {
    pub config: CoreConfig,
    pub encoder: LstmCell,
    pub mu_head: Affine,
    pub log_var_head: Affine,
    /// Latent to the decoder's initial `[h; c]`.
    pub decoder_init: Affine,
    pub decoder: LstmCell,
    pub output_head: Affine,
    /// Decoder input at the first step.
    pub decoder_start: ParamId,
}

impl SeqVae {
    /// Registers zero-initialized core parameters under `core.*`.
    pub fn register(store: &mut ParameterStore, group: GroupId, config: CoreConfig) -> Result<Self> {
        config.validate()?;
        let CoreConfig {
            core_dim,
            hidden,
            latent,
            ..
        } = config;
        Ok(Self {
            config,
            encoder: LstmCell::register(store, group, "core.encoder", core_dim, hidden)?,
            mu_head: Affine::register(store, group, "core.mu_head", hidden, latent)?,
            log_var_head: Affine::register(store, group, "core.log_var_head", hidden, latent)?,
            decoder_init: Affine::register(store, group, "core.decoder_init", latent, 2 * hidden)?,
            decoder: LstmCell::register(store, group, "core.decoder", core_dim, hidden)?,
            output_head: Affine::register(store, group, "core.output_head", hidden, core_dim)?,
            decoder_start: store.add_param(group, "core.decoder_start", &[core_dim])?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) {
        self.encoder.init(store, rng);
        self.mu_head.init(store, rng);
        self.log_var_head.init(store, rng);
        self.decoder_init.init(store, rng);
        self.decoder.init(store, rng);
        self.output_head.init(store, rng);
        store.init_uniform(self.decoder_start, self.config.core_dim, rng);
    }

    fn heads(&self, p: Values<'_>, h: &[f64]) -> LatentParams {
        let mut mu = vec![0.0; self.config.latent];
        let mut log_var = vec![0.0; self.config.latent];
        self.mu_head.forward_into(p, h, &mut mu);
        self.log_var_head.forward_into(p, h, &mut log_var);
        LatentParams { mu, log_var }
    }

    fn check_input(&self, seq: &Matrix, mask: &[bool]) -> Result<usize> {
        check_dim("encoder input width", self.config.core_dim, seq.cols())?;
        check_dim("mask length", seq.rows(), mask.len())?;
        mask_len(mask)
    }

    /// Posterior parameters from the hidden state at the last valid row.
    pub fn encode(&self, p: Values<'_>, seq: &Matrix, mask: &[bool]) -> Result<LatentParams> {
        let n = self.check_input(seq, mask)?;
        let mut state = LstmState::zeros(self.config.hidden);
        for t in 0..n {
            state = self.encoder.step(p, &state, seq.row(t))?;
        }
        Ok(self.heads(p, &state.h))
    }

    pub fn encode_traced(&self, p: Values<'_>, seq: &Matrix, mask: &[bool]) -> Result<(LatentParams, EncoderTrace)> {
        let n = self.check_input(seq, mask)?;
        let mut state = LstmState::zeros(self.config.hidden);
        let mut caches = Vec::with_capacity(n);
        for t in 0..n {
            let (next, cache) = self.encoder.step_cached(p, &state, seq.row(t))?;
            caches.push(cache);
            state = next;
        }
        let lp = self.heads(p, &state.h);
        Ok((
            lp,
            EncoderTrace {
                caches,
                h_last: state.h,
                rows: seq.rows(),
            },
        ))
    }

    /// Backpropagates `(dmu, dlog_var)` through the encoder. Returns the
    /// gradient w.r.t. the input rows (zero on padded rows).
    pub fn encode_backward(
        &self,
        p: Values<'_>,
        g: &mut Grads<'_>,
        trace: &EncoderTrace,
        dmu: &[f64],
        dlog_var: &[f64],
    ) -> Matrix {
        let mut dh = self.mu_head.backward(p, g, &trace.h_last, dmu);
        let dh_lv = self.log_var_head.backward(p, g, &trace.h_last, dlog_var);
        crate::math::add_assign(&mut dh, &dh_lv);
        let mut dc = vec![0.0; self.config.hidden];
        let mut dinput = Matrix::zeros(trace.rows, self.config.core_dim);
        for (t, cache) in trace.caches.iter().enumerate().rev() {
            let back = self.encoder.backward(p, g, cache, &dh, &dc);
            dinput.row_mut(t).copy_from_slice(&back.dx);
            dh = back.dh_prev;
            dc = back.dc_prev;
        }
        dinput
    }

    fn initial_state(&self, p: Values<'_>, z: &[f64]) -> LstmState {
        let hd = self.config.hidden;
        let mut hc = vec![0.0; 2 * hd];
        self.decoder_init.forward_into(p, z, &mut hc);
        let c = hc.split_off(hd);
        LstmState { h: hc, c }
    }

    /// Emits `seq_len` core-space rows from a latent vector.
    pub fn decode(&self, p: Values<'_>, z: &[f64], seq_len: usize) -> Result<Matrix> {
        check_dim("latent", self.config.latent, z.len())?;
        let mut state = self.initial_state(p, z);
        let mut out = Matrix::zeros(seq_len, self.config.core_dim);
        let mut input = p.get(self.decoder_start).to_vec();
        for t in 0..seq_len {
            state = self.decoder.step(p, &state, &input)?;
            self.output_head.forward_into(p, &state.h, out.row_mut(t));
            input.copy_from_slice(out.row(t));
        }
        Ok(out)
    }

    pub fn decode_traced(&self, p: Values<'_>, z: &[f64], seq_len: usize) -> Result<(Matrix, DecoderTrace)> {
        check_dim("latent", self.config.latent, z.len())?;
        let mut state = self.initial_state(p, z);
        let mut out = Matrix::zeros(seq_len, self.config.core_dim);
        let mut input = p.get(self.decoder_start).to_vec();
        let mut caches = Vec::with_capacity(seq_len);
        let mut hs = Vec::with_capacity(seq_len);
        for t in 0..seq_len {
            let (next, cache) = self.decoder.step_cached(p, &state, &input)?;
            caches.push(cache);
            state = next;
            self.output_head.forward_into(p, &state.h, out.row_mut(t));
            input.copy_from_slice(out.row(t));
            hs.push(state.h.clone());
        }
        Ok((
            out,
            DecoderTrace {
                z: z.to_vec(),
                caches,
                hs,
            },
        ))
    }

    /// Backpropagates the gradient w.r.t. every emitted row, including the
    /// feedback path, and returns the gradient w.r.t. the latent vector.
    pub fn decode_backward(&self, p: Values<'_>, g: &mut Grads<'_>, trace: &DecoderTrace, doutput: &Matrix) -> Vec<f64> {
        let hd = self.config.hidden;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dinput_next = vec![0.0; self.config.core_dim];
        for t in (0..trace.caches.len()).rev() {
            let mut dy = doutput.row(t).to_vec();
            crate::math::add_assign(&mut dy, &dinput_next);
            let mut dh = self.output_head.backward(p, g, &trace.hs[t], &dy);
            crate::math::add_assign(&mut dh, &dh_next);
            let back = self.decoder.backward(p, g, &trace.caches[t], &dh, &dc_next);
            dinput_next = back.dx;
            dh_next = back.dh_prev;
            dc_next = back.dc_prev;
        }
        crate::math::add_assign(g.get_mut(self.decoder_start), &dinput_next);
        dh_next.extend_from_slice(&dc_next);
        self.decoder_init.backward(p, g, &trace.z, &dh_next)
    }

    /// encode, sample with the given noise, decode.
    pub fn reconstruct(&self, p: Values<'_>, seq: &Matrix, mask: &[bool], eps: &[f64]) -> Result<(Matrix, LatentParams)> {
        let lp = self.encode(p, seq, mask)?;
        let z = sample_latent(&lp, eps)?;
        let out = self.decode(p, &z, seq.rows())?;
        Ok((out, lp))
    }
}
