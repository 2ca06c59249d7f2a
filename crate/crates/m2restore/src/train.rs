//! Training step: forward, combined loss, gradient accumulation over
//! micro-batches, and the Adam update.

use rand_chacha::ChaCha8Rng;

use crate::data::{Image, Sample};
use crate::dder::Mode;
use crate::error::{Error, Result};
use crate::loss::{loss_balance, loss_l1, loss_total};
use crate::model::Model;
use crate::optim::Adam;
use crate::prompt::PriorProvider;
use crate::tensor::{Scalar, Tensor};

/// Stack images into a [B,3,H,W] tensor. All images must share a size.
pub fn batch_tensor<S: Scalar>(images: &[&Image]) -> Result<Tensor<S>> {
    if images.is_empty() {
        return Err(Error::Contract("empty image batch".into()));
    }
    let (h, w) = (images[0].h, images[0].w);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.h != h || img.w != w {
            return Err(Error::Shape(format!(
                "batch mixes image sizes {}x{} and {}x{}",
                h, w, img.h, img.w
            )));
        }
        data.extend(img.data.iter().map(|&v| S::of(v as f64)));
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Extract image `b` of a [B,3,H,W] tensor, clamping to [0,1].
pub fn tensor_to_image<S: Scalar>(t: &Tensor<S>, b: usize) -> Result<Image> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 || b >= s[0] {
        return Err(Error::Shape(format!("expected [B,3,H,W] with b<{b}, got {:?}", s)));
    }
    let (h, w) = (s[2], s[3]);
    let plane = 3 * h * w;
    let mut img = Image::new(h, w);
    for (dst, src) in img.data.iter_mut().zip(&t.data()[b * plane..(b + 1) * plane]) {
        *dst = src.as_f64().clamp(0.0, 1.0) as f32;
    }
    Ok(img)
}

/// Scalars reported after each optimizer step.
#[derive(Clone, Debug)]
pub struct StepMetrics {
    pub l1: f64,
    pub balance: f64,
    pub total: f64,
    /// Hard activation count per expert, summed over routers and pixels.
    pub usage: Vec<u64>,
}

/// One optimizer step over `batch`, accumulating gradients across
/// `micro_steps` equally sized forward/backward passes. Reported losses are
/// averaged over micro-batches. A non-finite loss aborts before the update.
pub fn train_step<S: Scalar>(
    model: &mut Model<S>,
    batch: &[Sample],
    prior: &dyn PriorProvider<S>,
    opt: &mut Adam<S>,
    micro_steps: usize,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    batch_id: u64,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    if micro_steps == 0 || !batch.len().is_multiple_of(micro_steps) {
        return Err(Error::Config(format!(
            "micro steps {micro_steps} must evenly divide batch of {}",
            batch.len()
        )));
    }
    let chunk = batch.len() / micro_steps;
    let lambda = model.config.lambda;
    let eps = model.config.eps_stab;
    let scale = 1.0 / micro_steps as f64;

    let mut metrics =
        StepMetrics { l1: 0.0, balance: 0.0, total: 0.0, usage: vec![0; model.config.n_experts] };
    for (mi, samples) in batch.chunks(chunk).enumerate() {
        let degraded =
            batch_tensor::<S>(&samples.iter().map(|s| &s.degraded).collect::<Vec<_>>())?;
        let clean = batch_tensor::<S>(&samples.iter().map(|s| &s.clean).collect::<Vec<_>>())?;
        let priors = samples
            .iter()
            .map(|s| prior.prior(&s.degraded, Some(s.label)))
            .collect::<Result<Vec<_>>>()?;
        let (restored, diagnostics) = model.forward(&degraded, &priors, mode, rng)?;
        let l1 = loss_l1(&restored, &clean)?;
        let balance = if diagnostics.is_empty() {
            Tensor::from_vec(&[1], vec![S::zero()])?
        } else {
            loss_balance(&diagnostics, eps)?
        };
        let total = loss_total(&l1, &balance, lambda)?;

        let (l1_v, bal_v, total_v) =
            (l1.data()[0].as_f64(), balance.data()[0].as_f64(), total.data()[0].as_f64());
        if !total_v.is_finite() {
            opt.zero_grads(model);
            return Err(Error::Numeric(format!(
                "non-finite loss (l1={l1_v}, balance={bal_v}) in batch {batch_id}, micro-step {mi}, \
                 sample seeds {:?}",
                samples.iter().map(|s| s.seed).collect::<Vec<_>>()
            )));
        }
        metrics.l1 += l1_v * scale;
        metrics.balance += bal_v * scale;
        metrics.total += total_v * scale;
        for state in &diagnostics {
            let n = state.se.shape()[1];
            for (i, v) in state.se.data().iter().enumerate() {
                if *v != S::zero() {
                    metrics.usage[i % n] += 1;
                }
            }
        }

        total.mul_scalar(S::of(scale)).backward()?;
    }
    opt.step(model)?;
    Ok(metrics)
}
