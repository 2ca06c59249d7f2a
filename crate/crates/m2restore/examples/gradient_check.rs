//! Verify analytic gradients against central finite differences, from single
//! operations up to the full model with the combined objective.
//!
//! Run with: cargo run --release --example gradient_check

use m2restore::data::{make_sample, DegType, DegradeParams};
use m2restore::dder::Mode;
use m2restore::gradcheck::max_rel_err;
use m2restore::loss::{loss_balance, loss_l1, loss_total};
use m2restore::model::{Model, ModelConfig};
use m2restore::nn::Module;
use m2restore::prompt::{OraclePrior, PriorProvider};
use m2restore::tensor::Tensor;
use m2restore::train::batch_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> m2restore::Result<()> {
    // A single composite op chain: softmax of a projection, reduced to a scalar.
    let w = Tensor::<f64>::param(&[3, 3], vec![0.3, -0.1, 0.7, 0.2, 0.5, -0.4, -0.6, 0.1, 0.9])?;
    let x = Tensor::<f64>::param(&[3, 2], vec![1.0, -0.5, 0.25, 0.75, -1.0, 0.5])?;
    let err = max_rel_err(
        |ps| Ok(ps[0].matmul(&ps[1])?.softmax_lastdim()?.mul(&ps[1].gelu())?.sum_all()),
        &[w, x],
        1e-6,
    )?;
    println!("matmul/softmax/gelu chain: max rel err {err:.2e}");
    assert!(err <= 1e-6);

    // The whole model: restoration L1 plus the routing-balance term.
    let mut cfg = ModelConfig::tiny();
    cfg.blocks = vec![1, 1];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut model = Model::<f64>::new(&mut rng, cfg.clone())?;
    let sample = make_sample(42, DegType::Snow, &DegradeParams::default(), 16, 16)?;
    let degraded = batch_tensor::<f64>(&[&sample.degraded])?;
    let clean = batch_tensor::<f64>(&[&sample.clean])?;
    let oracle = OraclePrior::new(cfg.f_p, 7);
    let prior = oracle.prior(&sample.degraded, Some(sample.label))?;

    let mut params = Vec::new();
    model.visit_params("model", &mut |_, p| params.push(p.clone()));
    println!("checking {} trainable leaves of the full model...", params.len());
    let model = std::cell::RefCell::new(model);
    let err = max_rel_err(
        |ps| {
            // Reinstall the (possibly perturbed) leaves before each pass so
            // the finite-difference probes flow through the model.
            let mut m = model.borrow_mut();
            let mut i = 0;
            m.visit_params("model", &mut |_, p| {
                *p = ps[i].clone();
                i += 1;
            });
            let mut fwd = ChaCha8Rng::seed_from_u64(21);
            let (restored, diag) = m.forward(&degraded, std::slice::from_ref(&prior), Mode::Infer, &mut fwd)?;
            let l1 = loss_l1(&restored, &clean)?;
            let balance = loss_balance(&diag, cfg.eps_stab)?;
            loss_total(&l1, &balance, cfg.lambda)
        },
        &params,
        1e-5,
    )?;
    println!("full model total loss: max rel err {err:.2e}");
    assert!(err <= 1e-3);
    println!("all gradients match finite differences");
    Ok(())
}
