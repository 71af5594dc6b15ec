use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::store::{GroupId, Grads, ParamId, ParameterStore, Values};
use crate::error::{check_dim, Result};
use crate::math::{add_assign, matvec_acc, matvec_t_acc, outer_acc, sigmoid, tanh};

/// Hidden and cell state of one LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything one step's backward pass needs.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates laid out as `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients flowing out of one step's backward pass.
#[derive(Debug, Clone)]
pub struct LstmGrad {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Single-layer LSTM cell with input/forget/output sigmoid gates and a tanh
/// candidate. Gate rows are stacked `[i, f, g, o]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register(
        store: &mut ParameterStore,
        group: GroupId,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let w_ih = store.add_param(group, format!("{prefix}.w_ih"), &[4 * hidden, input])?;
        let w_hh = store.add_param(group, format!("{prefix}.w_hh"), &[4 * hidden, hidden])?;
        let bias = store.add_param(group, format!("{prefix}.bias"), &[4 * hidden])?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) {
        let fan_in = self.input + self.hidden;
        store.init_uniform(self.w_ih, fan_in, rng);
        store.init_uniform(self.w_hh, fan_in, rng);
        store.init_uniform(self.bias, fan_in, rng);
    }

    fn gates(&self, p: Values<'_>, state: &LstmState, x: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let mut z = p.get(self.bias).to_vec();
        matvec_acc(p.get(self.w_ih), x, &mut z);
        matvec_acc(p.get(self.w_hh), &state.h, &mut z);
        for v in &mut z[..2 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut z[2 * h..3 * h] {
            *v = tanh(*v);
        }
        for v in &mut z[3 * h..] {
            *v = sigmoid(*v);
        }
        z
    }

    fn check(&self, state: &LstmState, x: &[f64]) -> Result<()> {
        check_dim("lstm input", self.input, x.len())?;
        check_dim("lstm hidden state", self.hidden, state.h.len())?;
        check_dim("lstm cell state", self.hidden, state.c.len())
    }

    /// One forward step.
    pub fn step(&self, p: Values<'_>, state: &LstmState, x: &[f64]) -> Result<LstmState> {
        self.check(state, x)?;
        let (next, _, _) = self.advance(p, state, x);
        Ok(next)
    }

    /// One forward step that also returns the cache for [`LstmCell::backward`].
    pub fn step_cached(&self, p: Values<'_>, state: &LstmState, x: &[f64]) -> Result<(LstmState, LstmCache)> {
        self.check(state, x)?;
        let (next, gates, tanh_c) = self.advance(p, state, x);
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            tanh_c,
        };
        Ok((next, cache))
    }

    fn advance(&self, p: Values<'_>, state: &LstmState, x: &[f64]) -> (LstmState, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let z = self.gates(p, state, x);
        let (i, rest) = z.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for k in 0..hd {
            c[k] = f[k] * state.c[k] + i[k] * g[k];
            tanh_c[k] = tanh(c[k]);
            h[k] = o[k] * tanh_c[k];
        }
        (LstmState { h, c }, z, tanh_c)
    }

    /// Backward through one step given the gradients w.r.t. the step's
    /// outputs `h` and `c`. Accumulates weight gradients.
    pub fn backward(
        &self,
        p: Values<'_>,
        g: &mut Grads<'_>,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
    ) -> LstmGrad {
        let hd = self.hidden;
        let z = &cache.gates;
        let mut da = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, gc, o) = (z[k], z[hd + k], z[2 * hd + k], z[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            let di = dct * gc;
            let dg = dct * i;
            let df = dct * cache.c_prev[k];
            dc_prev[k] = dct * f;
            da[k] = di * i * (1.0 - i);
            da[hd + k] = df * f * (1.0 - f);
            da[2 * hd + k] = dg * (1.0 - gc * gc);
            da[3 * hd + k] = d_o * o * (1.0 - o);
        }
        outer_acc(g.get_mut(self.w_ih), &da, &cache.x);
        outer_acc(g.get_mut(self.w_hh), &da, &cache.h_prev);
        add_assign(g.get_mut(self.bias), &da);
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(p.get(self.w_ih), &da, &mut dx);
        let mut dh_prev = vec![0.0; hd];
        matvec_t_acc(p.get(self.w_hh), &da, &mut dh_prev);
        LstmGrad { dx, dh_prev, dc_prev }
    }
}
