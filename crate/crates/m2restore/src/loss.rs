//! Training objectives: pixel L1 and the CV² load-balance penalty over
//! router diagnostics.

use crate::dder::RoutingState;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean absolute error over all pixels and channels.
pub fn loss_l1<S: Scalar>(restored: &Tensor<S>, clean: &Tensor<S>) -> Result<Tensor<S>> {
    restored.l1_loss(clean)
}

/// Squared coefficient of variation of a per-expert vector, population
/// variance: Var(w) / (Mean(w)² + ε). Differentiable in `w`.
fn cv2<S: Scalar>(w: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
    let mean = w.mean_all();
    let mean_sq = mean.mul(&mean)?;
    let var = w.mul(w)?.mean_all().sub(&mean_sq)?;
    var.div(&mean_sq.add_scalar(S::of(eps)))
}

fn cv2_const(v: &[f64], eps: f64) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var / (mean * mean + eps)
}

/// Load-balance penalty over all routing states of a forward pass:
/// CV²(w) + CV²(s), where w aggregates each expert's selection weight
/// (gradient-carrying) and s counts its hard activations (constant).
pub fn loss_balance<S: Scalar>(diagnostics: &[RoutingState<S>], eps: f64) -> Result<Tensor<S>> {
    if diagnostics.is_empty() {
        return Err(Error::Contract("balance loss needs at least one routing state".into()));
    }
    let n = diagnostics[0].se.shape()[1];
    let mut w: Option<Tensor<S>> = None;
    let mut counts = vec![0.0f64; n];
    for state in diagnostics {
        let shape = state.se.shape();
        if shape.len() != 2 || shape[1] != n {
            return Err(Error::Shape(format!(
                "routing weights expected [*, {n}], got {:?}",
                shape
            )));
        }
        let col_sums = state.se.sum_axis0()?;
        w = Some(match w {
            Some(acc) => acc.add(&col_sums)?,
            None => col_sums,
        });
        let data = state.se.data();
        for row in 0..shape[0] {
            for e in 0..n {
                if data[row * n + e] != S::zero() {
                    counts[e] += 1.0;
                }
            }
        }
    }
    let w_term = cv2(&w.unwrap(), eps)?;
    Ok(w_term.add_scalar(S::of(cv2_const(&counts, eps))))
}

/// Combined objective: l1 + λ·balance.
pub fn loss_total<S: Scalar>(
    l1: &Tensor<S>,
    balance: &Tensor<S>,
    lambda: f64,
) -> Result<Tensor<S>> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda {lambda} < 0")));
    }
    l1.add(&balance.mul_scalar(S::of(lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::max_rel_err;

    const EPS: f64 = 1e-10;

    fn state_from_se(se: Tensor<f64>) -> RoutingState<f64> {
        let n = se.shape()[1];
        let dummy = Tensor::<f64>::zeros(&[1, n]);
        RoutingState {
            score: dummy.clone(),
            bias: dummy.clone(),
            s: dummy.clone(),
            sigma: dummy.clone(),
            s_tilde: dummy,
            eps_mask: vec![0; n],
            se,
        }
    }

    #[test]
    fn l1_matches_hand_computed_mean() {
        let a = Tensor::<f64>::from_vec(&[2], vec![1.0, 3.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![2.0, 5.0]).unwrap();
        assert!((loss_l1(&a, &b).unwrap().data()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn l1_is_zero_on_identical_inputs_and_symmetric_under_negation() {
        let a = Tensor::<f64>::from_vec(&[3], vec![0.2, -0.4, 0.9]).unwrap();
        assert_eq!(loss_l1(&a, &a).unwrap().data()[0], 0.0);
        let b = Tensor::<f64>::from_vec(&[3], vec![0.5, 0.1, -0.2]).unwrap();
        let plain = loss_l1(&a, &b).unwrap().data()[0];
        let neg = loss_l1(&a.neg(), &b.neg()).unwrap().data()[0];
        assert!((plain - neg).abs() < 1e-12);
    }

    #[test]
    fn balance_is_near_zero_for_uniform_usage() {
        let se = Tensor::<f64>::from_vec(&[4, 2], vec![0.5; 8]).unwrap();
        let loss = loss_balance(&[state_from_se(se)], EPS).unwrap();
        assert!(loss.data()[0].abs() <= 1e-6, "{}", loss.data()[0]);
    }

    #[test]
    fn balance_matches_closed_form_for_total_collapse() {
        // All weight on expert 0 over 4 rows: both CV² terms equal 1.
        let se =
            Tensor::<f64>::from_vec(&[4, 2], vec![0.25, 0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 0.0])
                .unwrap();
        let loss = loss_balance(&[state_from_se(se)], EPS).unwrap();
        assert!((loss.data()[0] - 2.0).abs() < 1e-3, "{}", loss.data()[0]);
    }

    #[test]
    fn balance_weight_term_is_scale_invariant() {
        let vals = vec![0.7, 0.3, 0.1, 0.9, 0.6, 0.4, 0.2, 0.8];
        let se = Tensor::<f64>::from_vec(&[4, 2], vals.clone()).unwrap();
        let scaled =
            Tensor::<f64>::from_vec(&[4, 2], vals.iter().map(|v| v * 7.0).collect()).unwrap();
        let a = loss_balance(&[state_from_se(se)], EPS).unwrap().data()[0];
        let b = loss_balance(&[state_from_se(scaled)], EPS).unwrap().data()[0];
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn balance_is_nonnegative_and_aggregates_across_states() {
        let se1 = Tensor::<f64>::from_vec(&[2, 3], vec![0.9, 0.1, 0.0, 0.0, 0.4, 0.6]).unwrap();
        let se2 = Tensor::<f64>::from_vec(&[2, 3], vec![0.2, 0.0, 0.8, 0.5, 0.5, 0.0]).unwrap();
        let loss = loss_balance(&[state_from_se(se1), state_from_se(se2)], EPS).unwrap();
        assert!(loss.data()[0] >= 0.0);
        assert!(loss_balance::<f64>(&[], EPS).is_err());
    }

    #[test]
    fn total_combines_terms_linearly() {
        let l1 = Tensor::<f64>::from_vec(&[1], vec![1.5]).unwrap();
        let bal = Tensor::<f64>::from_vec(&[1], vec![2.0]).unwrap();
        assert!((loss_total(&l1, &bal, 0.0).unwrap().data()[0] - 1.5).abs() < 1e-12);
        assert!((loss_total(&l1, &bal, 0.01).unwrap().data()[0] - 1.52).abs() < 1e-12);
        assert!(loss_total(&l1, &bal, -0.5).is_err());
    }

    #[test]
    fn total_is_monotone_in_lambda_for_positive_balance() {
        let l1 = Tensor::<f64>::from_vec(&[1], vec![0.8]).unwrap();
        let bal = Tensor::<f64>::from_vec(&[1], vec![0.3]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0] {
            let v = loss_total(&l1, &bal, lambda).unwrap().data()[0];
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn balance_gradient_matches_finite_differences() {
        // Keep every weight strictly positive so the constant count term
        // does not change under finite-difference perturbation.
        let p = Tensor::<f64>::param(&[4, 2], vec![0.7, 0.3, 0.4, 0.6, 0.9, 0.1, 0.2, 0.8])
            .unwrap();
        let err = max_rel_err(
            |ps| {
                let se = ps[0].mul(&ps[0])?;
                loss_balance(&[state_from_se(se)], EPS)
            },
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }
}
