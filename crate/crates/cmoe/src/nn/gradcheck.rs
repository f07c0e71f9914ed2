//! Central finite-difference gradient oracle. This only re-evaluates the loss
//! closure; it knows nothing about the tape, so it stays an independent check
//! of every backward rule.

use super::store::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

/// Central-difference gradient of `f` with respect to one parameter tensor.
/// Step size is scaled per coordinate: `h * max(1, |x|)`.
pub fn central_diff(
    store: &mut ParamStore,
    id: ParamId,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Tensor {
    let (rows, cols) = {
        let t = store.get(id);
        (t.rows, t.cols)
    };
    let mut grad = Tensor::zeros(rows, cols);
    for k in 0..rows * cols {
        let x0 = store.get(id).data[k];
        let step = h * x0.abs().max(1.0);
        store.get_mut(id).data[k] = x0 + step;
        let fp = f(store);
        store.get_mut(id).data[k] = x0 - step;
        let fm = f(store);
        store.get_mut(id).data[k] = x0;
        grad.data[k] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Relative error with a floor so tiny gradients compare in absolute terms.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Max relative error between analytic grads and the finite-difference oracle
/// over the listed parameters.
pub fn max_rel_err(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &Grads,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &id in ids {
        let fd = central_diff(store, id, 1e-5, &mut f);
        let zero = Tensor::zeros(fd.rows, fd.cols);
        let an = analytic.get(id).unwrap_or(&zero);
        for (a, b) in an.data.iter().zip(&fd.data) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    worst
}
