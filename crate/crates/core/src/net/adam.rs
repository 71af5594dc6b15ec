use alloc::vec;
use alloc::vec::Vec;

use super::store::ParameterStore;
use crate::math::sqrt;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments and bias-correction bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl OptimizerState {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let mut s = Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        };
        s.sync_shapes(store);
        s
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn sync_shapes(&mut self, store: &ParameterStore) {
        for id in store.ids().skip(self.m.len()) {
            let n = store.value(id).len();
            self.m.push(vec![0.0; n]);
            self.v.push(vec![0.0; n]);
        }
    }

    /// Bias-corrected Adam update of every trainable group, then zeroes all
    /// gradients. Frozen parameters and their moments are left untouched.
    pub fn step(&mut self, store: &mut ParameterStore) {
        self.sync_shapes(store);
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.beta1_pow *= beta1;
        self.beta2_pow *= beta2;
        let c1 = 1.0 - self.beta1_pow;
        let c2 = 1.0 - self.beta2_pow;
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let k = id.index();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let (values, grad) = store.value_and_grad(id);
            for ((w, g), (mi, vi)) in values.iter_mut().zip(grad).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (sqrt(v_hat) + eps);
            }
        }
        store.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(frozen: bool) -> ParameterStore {
        let mut s = ParameterStore::new();
        let g = s.add_group("g").unwrap();
        let id = s.add_param(g, "w", &[1]).unwrap();
        s.value_mut(id)[0] = 0.75;
        s.grad_mut(id)[0] = 1.0;
        s.set_trainable(g, !frozen);
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(false);
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.step(&mut s);
        let id = s.find("w").unwrap();
        let delta = s.value(id)[0] - 0.75;
        // m_hat = 1, v_hat = 1 => delta = -lr / (1 + eps)
        assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
        assert_eq!(s.grad(id)[0], 0.0);
    }

    #[test]
    fn frozen_group_is_bit_identical() {
        let mut s = scalar_store(true);
        let before = s.value(s.find("w").unwrap())[0].to_bits();
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.step(&mut s);
        assert_eq!(s.value(s.find("w").unwrap())[0].to_bits(), before);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = scalar_store(false);
        let mut b = scalar_store(false);
        let mut oa = OptimizerState::new(&a, AdamConfig::default());
        let mut ob = OptimizerState::new(&b, AdamConfig::default());
        for _ in 0..5 {
            for s in [&mut a, &mut b] {
                let id = s.find("w").unwrap();
                s.grad_mut(id)[0] = 0.3;
            }
            oa.step(&mut a);
            ob.step(&mut b);
        }
        assert_eq!(a, b);
    }
}
