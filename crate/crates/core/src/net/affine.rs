use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::store::{GroupId, Grads, ParamId, ParameterStore, Values};
use crate::error::{check_dim, Result};
use crate::math::{add_assign, matvec_acc, matvec_t_acc, outer_acc};

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Affine {
    /// Registers `<prefix>.weight` (output x input) and `<prefix>.bias`.
    pub fn register(
        store: &mut ParameterStore,
        group: GroupId,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let weight = store.add_param(group, format!("{prefix}.weight"), &[output, input])?;
        let bias = store.add_param(group, format!("{prefix}.bias"), &[output])?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) {
        store.init_uniform(self.weight, self.input, rng);
        store.init_uniform(self.bias, self.input, rng);
    }

    /// Sets `W` to the (possibly rectangular) identity and `b` to zero.
    pub fn set_identity(&self, store: &mut ParameterStore) {
        let cols = self.input;
        for (i, v) in store.value_mut(self.weight).iter_mut().enumerate() {
            *v = if i / cols == i % cols { 1.0 } else { 0.0 };
        }
        store.value_mut(self.bias).iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn forward(&self, p: Values<'_>, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("affine input", self.input, x.len())?;
        let mut out = vec![0.0; self.output];
        self.forward_into(p, x, &mut out);
        Ok(out)
    }

    /// Unchecked forward; `x` and `out` must have the layer's dimensions.
    #[inline]
    pub fn forward_into(&self, p: Values<'_>, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p.get(self.bias));
        matvec_acc(p.get(self.weight), x, out);
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` and returns `dx = Wᵀ dy`.
    pub fn backward(&self, p: Values<'_>, g: &mut Grads<'_>, x: &[f64], dy: &[f64]) -> Vec<f64> {
        outer_acc(g.get_mut(self.weight), dy, x);
        add_assign(g.get_mut(self.bias), dy);
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(p.get(self.weight), dy, &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(input: usize, output: usize) -> (ParameterStore, Affine) {
        let mut s = ParameterStore::new();
        let g = s.add_group("g").unwrap();
        let a = Affine::register(&mut s, g, "fc", input, output).unwrap();
        (s, a)
    }

    #[test]
    fn identity_passes_input_through() {
        let (mut s, a) = layer(3, 3);
        a.set_identity(&mut s);
        assert_eq!(a.forward(s.values(), &[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn small_analytic_case() {
        let (mut s, a) = layer(2, 1);
        s.value_mut(a.weight).copy_from_slice(&[1.0, 2.0]);
        s.value_mut(a.bias).copy_from_slice(&[3.0]);
        assert_eq!(a.forward(s.values(), &[1.0, 1.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let (s, a) = layer(2, 1);
        assert!(a.forward(s.values(), &[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mut s, a) = layer(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        a.init(&mut s, &mut rng);
        let x = [0.3, -1.2, 0.7, 2.0];
        let target = [0.1, 0.2, -0.4];
        let err = grad_check(
            &mut s,
            |s| {
                let y = a.forward(s.values(), &x).unwrap();
                let dy: Vec<f64> = y.iter().zip(&target).map(|(y, t)| 2.0 * (y - t)).collect();
                let (p, mut g) = s.split();
                a.backward(p, &mut g, &x, &dy);
                y.iter().zip(&target).map(|(y, t)| (y - t) * (y - t)).sum()
            },
            15,
            1e-5,
            9,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }
}
