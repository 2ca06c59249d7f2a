//! Evaluate restoration quality: PSNR and SSIM per degradation type for an
//! identity-initialized model (output == input), which reports exactly the
//! degraded-vs-clean baseline.
//!
//! Run with: cargo run --release --example evaluate_model

use m2restore::data::{make_sample, DegType, DegradeParams};
use m2restore::dder::Mode;
use m2restore::metrics::{psnr, ssim};
use m2restore::model::{Model, ModelConfig};
use m2restore::prompt::{OraclePrior, PriorProvider};
use m2restore::train::{batch_tensor, tensor_to_image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> m2restore::Result<()> {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // The output head starts at zero, so a fresh model is the identity map.
    let model = Model::<f32>::new(&mut rng, cfg.clone())?;
    let prior = OraclePrior::new(cfg.f_p, 7);
    let params = DegradeParams::default();

    println!("{:>8}  {:>9}  {:>7}", "type", "psnr(dB)", "ssim");
    for ty in [DegType::Rain, DegType::Snow, DegType::Haze, DegType::Raindrop] {
        let (mut p_sum, mut s_sum) = (0.0, 0.0);
        let n = 5;
        for i in 0..n {
            let sample = make_sample(500 + i, ty, &params, 64, 64)?;
            let x = batch_tensor::<f32>(&[&sample.degraded])?;
            let pr = prior.prior(&sample.degraded, Some(sample.label))?;
            let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
            let (restored, _) = model.forward(&x, &[pr], Mode::Infer, &mut fwd_rng)?;
            let img = tensor_to_image(&restored, 0)?;
            p_sum += psnr(&img, &sample.clean, 1.0)?;
            s_sum += ssim(&img, &sample.clean)?;
        }
        println!("{ty:>8}  {:>9.3}  {:>7.4}", p_sum / n as f64, s_sum / n as f64);
    }
    Ok(())
}
