//! Adam optimizer driven by the module parameter visitor.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Scalar, Tensor};

/// Adam with bias correction. First/second moments are keyed by parameter
/// name so they survive checkpoint round trips.
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Vec<S>>,
    pub v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over every parameter that received a gradient. Leaves
    /// without a gradient are left untouched. Gradients are consumed.
    pub fn step<M: Module<S> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (nb1, nb2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));

        let mut failure: Option<Error> = None;
        let m_map = &mut self.m;
        let v_map = &mut self.v;
        let (lr, eps) = (self.lr, self.eps);
        model.visit_params("model", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            let Some(g) = p.grad() else { return };
            p.clear_grad();
            let n = p.numel();
            let m = m_map.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            let v = v_map.entry(name).or_insert_with(|| vec![S::zero(); n]);
            let mut data = p.data().to_vec();
            for i in 0..n {
                m[i] = b1 * m[i] + nb1 * g[i];
                v[i] = b2 * v[i] + nb2 * g[i] * g[i];
                let mhat = m[i].as_f64() / bc1;
                let vhat = v[i].as_f64() / bc2;
                data[i] = S::of(data[i].as_f64() - lr * mhat / (vhat.sqrt() + eps));
            }
            match Tensor::param(p.shape(), data) {
                Ok(updated) => *p = updated,
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Drop any pending gradients without updating.
    pub fn zero_grads<M: Module<S> + ?Sized>(&mut self, model: &mut M) {
        model.visit_params("model", &mut |_, p| p.clear_grad());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::randn_vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quad {
        x: Tensor<f64>,
    }

    impl Module<f64> for Quad {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<f64>)) {
            f(format!("{prefix}.x"), &mut self.x);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Quad { x: Tensor::param(&[4], randn_vec(&mut rng, 4, 1.0)).unwrap() };
        let before = model.x.data().to_vec();
        let mut opt = Adam::new(0.0);
        let loss = model.x.mul(&model.x).unwrap().sum_all();
        loss.backward().unwrap();
        opt.step(&mut model).unwrap();
        assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            model.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut model = Quad { x: Tensor::param(&[3], vec![5.0, -4.0, 2.5]).unwrap() };
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            let loss = model.x.mul(&model.x).unwrap().sum_all();
            loss.backward().unwrap();
            opt.step(&mut model).unwrap();
        }
        for &v in model.x.data() {
            assert!(v.abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn accumulated_gradients_sum_across_backward_passes() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let l1 = x.sum_all();
        l1.backward().unwrap();
        let l2 = x.mul_scalar(3.0).sum_all();
        l2.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
    }
}
