use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::store::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(|numeric|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients against central differences.
///
/// `objective` must return the loss and accumulate its gradient into the
/// store's gradient buffers (which are zeroed before every call). Probes are
/// drawn uniformly over the scalars of trainable parameters. Returns the
/// worst relative error; the store's values are restored and its gradient
/// buffers hold the analytic gradient on return.
pub fn grad_check<F>(store: &mut ParameterStore, mut objective: F, probes: usize, h: f64, seed: u64) -> Result<f64>
where
    F: FnMut(&mut ParameterStore) -> f64,
{
    let mut eval = |store: &mut ParameterStore| {
        store.zero_grad();
        let v = objective(store);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue)
        }
    };
    eval(store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).to_vec()).collect();

    let coords: Vec<(ParamId, usize)> = store
        .ids()
        .filter(|&id| store.is_trainable(id))
        .flat_map(|id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    if coords.is_empty() {
        return Err(Error::Empty("trainable parameters"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (id, i) = coords[rng.random_range(0..coords.len())];
        let w = store.value(id)[i];
        store.value_mut(id)[i] = w + h;
        let plus = eval(store);
        store.value_mut(id)[i] = w - h;
        let minus = eval(store);
        store.value_mut(id)[i] = w;
        let numeric = (plus? - minus?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[id.index()][i], numeric));
    }
    for (id, g) in store.ids().zip(analytic).collect::<Vec<_>>() {
        store.grad_mut(id).copy_from_slice(&g);
    }
    Ok(worst)
}
