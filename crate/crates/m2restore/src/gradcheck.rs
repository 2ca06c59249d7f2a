//! Central finite-difference gradient verification.
//!
//! The numeric side only ever calls the forward pass, so it stays an
//! independent oracle for the recorded backward closures.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Rebuild a trainable leaf with one element nudged by `bump`.
fn perturbed<S: Scalar>(t: &Tensor<S>, idx: usize, bump: S) -> Result<Tensor<S>> {
    let mut data = t.data().to_vec();
    data[idx] = data[idx] + bump;
    Tensor::param(t.shape(), data)
}

/// Compare analytic gradients of `f` (a scalar-valued forward pass over the
/// given trainable leaves) against central finite differences with step `h`.
/// Returns the worst relative error across all elements of all leaves.
pub fn max_rel_err<S, F>(f: F, params: &[Tensor<S>], h: f64) -> Result<f64>
where
    S: Scalar,
    F: Fn(&[Tensor<S>]) -> Result<Tensor<S>>,
{
    for p in params {
        p.clear_grad();
    }
    let loss = f(params)?;
    loss.backward()?;
    let analytic: Vec<Vec<S>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![S::zero(); p.numel()]))
        .collect();

    let hb = S::of(h);
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let mut plus = params.to_vec();
            plus[pi] = perturbed(p, i, hb)?;
            let fp = f(&plus)?.item()?.as_f64();
            let mut minus = params.to_vec();
            minus[pi] = perturbed(p, i, -hb)?;
            let fm = f(&minus)?.item()?.as_f64();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi][i].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
