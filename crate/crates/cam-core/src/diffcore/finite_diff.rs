//! Central finite differences over a parameter store.
//!
//! This is the reference gradient every backward implementation is checked
//! against. It must stay independent of the tape: it only perturbs stored
//! values and calls a black-box scalar function.

use crate::diffcore::params::{ParamId, ParamStore};
use crate::error::{CamError, Result};

/// Central-difference gradient of `f` with respect to every parameter
/// coordinate. Values are restored bit-exactly after each probe.
pub fn finite_diff_grad<F>(
    store: &mut ParamStore,
    eps: f64,
    mut f: F,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    assert!(eps > 0.0);
    let mut grads = Vec::with_capacity(store.len());
    for pi in 0..store.len() {
        let id = ParamId(pi as u32);
        let n = store.get(id).len();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let orig = store.get(id).values[i];
            store.get_mut(id).values[i] = orig + eps;
            let up = f(store)?;
            store.get_mut(id).values[i] = orig - eps;
            let down = f(store)?;
            store.get_mut(id).values[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(CamError::Numeric(format!(
                    "objective non-finite while probing parameter {pi} index {i}"
                )));
            }
            g[i] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|), over all coordinates.
pub fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (pa, pb) in a.iter().zip(b) {
        for (x, y) in pa.iter().zip(pb) {
            let denom = 1.0f64.max(x.abs()).max(y.abs());
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// Gradients currently stored in `store`, in allocation order.
pub fn collect_grads(store: &ParamStore) -> Vec<Vec<f64>> {
    store.iter().map(|p| p.grad.clone()).collect()
}
