//! Seeded parameter initialization helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Scalar, Tensor};
use crate::error::Result;

/// Gaussian buffer with the given standard deviation. Samples are drawn in
/// f64 and narrowed, so the stream is a pure function of the rng state.
pub fn randn_vec<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<S> {
    (0..n)
        .map(|_| S::of(rng.sample::<f64, _>(StandardNormal) * std))
        .collect()
}

pub fn uniform_vec<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<S> {
    (0..n).map(|_| S::of(rng.gen_range(lo..hi))).collect()
}

/// Trainable tensor with fan-in-scaled Gaussian init (std = 1/sqrt(fan_in)).
pub fn param_fan_in<S: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::param(shape, randn_vec(rng, n, std))
}

/// Trainable tensor with explicit Gaussian std.
pub fn param_randn<S: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    std: f64,
) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, randn_vec(rng, n, std))
}

/// Trainable all-zero tensor (biases, zero-init output heads).
pub fn param_zeros<S: Scalar>(shape: &[usize]) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![S::zero(); n])
}

/// Trainable all-constant tensor (layer-norm gains, gating coefficients).
pub fn param_full<S: Scalar>(shape: &[usize], v: S) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![v; n])
}
