//! Central finite differences against the tape's reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Max over coordinates of `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
///
/// `f` must produce a scalar; it is re-evaluated `2 * input.len()` times for
/// the finite differences, so keep inputs toy-sized.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Graph, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }

    let g = Graph::new();
    let x = g.leaf(input.clone(), true);
    let y = f(&g, x)?;
    if g.value(y).len() != 1 {
        return Err(Error::Contract("grad_check requires a scalar-valued function".into()));
    }
    g.backward(y);
    let g_ad = g.grad(x).unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |t: &Tensor| -> Result<f64> {
        let g = Graph::new();
        let x = g.leaf(t.clone(), false);
        let y = f(&g, x)?;
        let out = g.value(y).item();
        Ok(out)
    };

    let mut max_rel: f64 = 0.0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let ad = g_ad.data()[i];
        let rel = (ad - fd).abs() / 1.0_f64.max(ad.abs()).max(fd.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
