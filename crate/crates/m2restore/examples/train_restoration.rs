//! Train a small restoration model for a few steps and watch the combined
//! L1 + balance objective decrease.
//!
//! Run with: cargo run --release --example train_restoration

use m2restore::data::{make_sample, DegType, DegradeParams};
use m2restore::dder::Mode;
use m2restore::model::{Model, ModelConfig};
use m2restore::optim::Adam;
use m2restore::prompt::OraclePrior;
use m2restore::train::train_step;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> m2restore::Result<()> {
    let mut cfg = ModelConfig::tiny();
    cfg.channels = vec![8, 16];
    cfg.heads = 2;

    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::<f32>::new(&mut init_rng, cfg.clone())?;
    let mut opt = Adam::new(1e-3);
    let prior = OraclePrior::new(cfg.f_p, 7);

    // A fixed mini-batch: one sample per degradation type.
    let params = DegradeParams::default();
    let batch: Vec<_> = [DegType::Rain, DegType::Snow, DegType::Haze, DegType::Raindrop]
        .iter()
        .enumerate()
        .map(|(i, &ty)| make_sample(100 + i as u64, ty, &params, 32, 32).unwrap())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for step in 0..40 {
        let m = train_step(&mut model, &batch, &prior, &mut opt, 1, Mode::Train, &mut rng, step)?;
        if step % 5 == 0 || step == 39 {
            println!(
                "step {step:>3}: l1 {:.4}  balance {:.4}  total {:.4}  usage {:?}",
                m.l1, m.balance, m.total, m.usage
            );
        }
    }
    Ok(())
}
