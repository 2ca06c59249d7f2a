//! Degradation-aware dynamic expert routing: per-pixel scores biased by the
//! degradation prior, optional train-time Gaussian perturbation, sparse
//! top-K expert weights, and weighted dispatch over a bank of pointwise
//! residual experts.

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module};
use crate::tensor::init::{param_fan_in, param_full, param_randn, param_zeros};
use crate::tensor::{Scalar, Tensor};

/// Forward-pass mode: training injects routing noise, inference is fully
/// deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Router weights for one encoder level with feature width d:
/// gate W_g[2d,N], prior bias W_b[D,N], noise W_n[2d,N], gating
/// coefficients alpha[N], top-K of N experts.
pub struct RouterParams<S: Scalar> {
    pub w_g: Tensor<S>,
    pub w_b: Tensor<S>,
    pub w_n: Tensor<S>,
    pub alpha: Tensor<S>,
    pub k: usize,
    pub n: usize,
}

impl<S: Scalar> RouterParams<S> {
    pub fn new(rng: &mut ChaCha8Rng, d: usize, num_classes: usize, n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("top-K {k} out of range for {n} experts")));
        }
        Ok(RouterParams {
            w_g: param_fan_in(rng, &[2 * d, n], 2 * d)?,
            // moderate spread so distinct priors bias toward distinct experts
            w_b: param_randn(rng, &[num_classes, n], 0.5)?,
            // zero noise weights start sigma at softplus(0) = ln 2
            w_n: param_zeros(&[2 * d, n])?,
            alpha: param_full(&[n], S::one())?,
            k,
            n,
        })
    }
}

impl<S: Scalar> Module<S> for RouterParams<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.w_g"), &mut self.w_g);
        f(format!("{prefix}.w_b"), &mut self.w_b);
        f(format!("{prefix}.w_n"), &mut self.w_n);
        f(format!("{prefix}.alpha"), &mut self.alpha);
    }
}

/// Everything the router computed for one forward pass. `se` carries the
/// gradient path; the rest are diagnostics for losses and analysis.
#[derive(Clone, Debug)]
pub struct RoutingState<S: Scalar> {
    pub score: Tensor<S>,
    pub bias: Tensor<S>,
    pub s: Tensor<S>,
    pub sigma: Tensor<S>,
    pub s_tilde: Tensor<S>,
    pub eps_mask: Vec<u8>,
    pub se: Tensor<S>,
}

/// One expert: residual pointwise MLP with expansion 2. Shape preserving on
/// [B,d,H,W].
pub struct Expert<S: Scalar> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
}

impl<S: Scalar> Expert<S> {
    pub fn new(rng: &mut ChaCha8Rng, d: usize) -> Result<Self> {
        Ok(Expert {
            conv1: Conv2d::pointwise(rng, d, 2 * d)?,
            conv2: Conv2d::pointwise(rng, 2 * d, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.add(&self.conv2.forward(&self.conv1.forward(x)?.gelu())?)
    }
}

impl<S: Scalar> Module<S> for Expert<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
    }
}

pub struct ExpertBank<S: Scalar> {
    pub experts: Vec<Expert<S>>,
}

impl<S: Scalar> ExpertBank<S> {
    pub fn new(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Result<Self> {
        let experts = (0..n).map(|_| Expert::new(rng, d)).collect::<Result<_>>()?;
        Ok(ExpertBank { experts })
    }
}

impl<S: Scalar> Module<S> for ExpertBank<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        for (i, e) in self.experts.iter_mut().enumerate() {
            e.visit_params(&format!("{prefix}.expert{i}"), f);
        }
    }
}

/// x_p[B,2d,H,W]: the task prompt projected to d channels, broadcast over
/// the grid and concatenated after the d feature channels.
pub fn joint_features<S: Scalar>(
    x: &Tensor<S>,
    t_task: &Tensor<S>,
    proj_w: &Tensor<S>,
    proj_b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("joint_features: x {:?}", s)));
    }
    let prompt = t_task
        .linear(proj_w, Some(proj_b))?
        .broadcast_spatial(s[2], s[3])?;
    x.concat_channels(&prompt)
}

/// Flatten x_p to per-pixel rows [P, 2d], P = B·H·W.
fn flatten_pixels<S: Scalar>(x_p: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x_p.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    x_p.chw_to_lc()?.reshape(&[b * hw, c])
}

/// (score, bias, S): score = x_p·W_g per pixel; bias = d_g·W_b broadcast to
/// every pixel; S = score + alpha ⊙ bias.
pub fn route_scores<S: Scalar>(
    x_p: &Tensor<S>,
    d_g: &Tensor<S>,
    p: &RouterParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let shape = x_p.shape().to_vec();
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    let rows = flatten_pixels(x_p)?;
    let score = rows.matmul(&p.w_g)?;
    let per_image = d_g.matmul(&p.w_b)?; // [B,N]
    let bias = per_image
        .broadcast_spatial(h, w)?
        .chw_to_lc()?
        .reshape(&[b * h * w, p.n])?;
    let s = score.add(&bias.mul_bias(&p.alpha)?)?;
    Ok((score, bias, s))
}

/// sigma = Softplus(x_p·W_n) per pixel per expert.
pub fn noise_sigma<S: Scalar>(x_p: &Tensor<S>, p: &RouterParams<S>) -> Result<Tensor<S>> {
    Ok(flatten_pixels(x_p)?.matmul(&p.w_n)?.softplus())
}

/// Deterministic core of the perturbation: S̃ = S + sigma ⊙ noise with a
/// fixed noise field (already masked). Exposed so gradient tests can pin the
/// noise.
pub fn perturb_with<S: Scalar>(
    s: &Tensor<S>,
    sigma: &Tensor<S>,
    noise: &Tensor<S>,
) -> Result<Tensor<S>> {
    s.add(&sigma.mul(noise)?)
}

/// Train mode: Gaussian noise scaled by sigma, gated by a Bernoulli(0.5)
/// mask drawn once per expert dimension per pass. Infer mode: S̃ is S,
/// bit-exactly.
pub fn perturb<S: Scalar>(
    s: &Tensor<S>,
    x_p: &Tensor<S>,
    p: &RouterParams<S>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<S>, Tensor<S>, Vec<u8>)> {
    let sigma = noise_sigma(x_p, p)?;
    match mode {
        Mode::Infer => Ok((s.clone(), sigma, vec![0; p.n])),
        Mode::Train => {
            let mask: Vec<u8> = (0..p.n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            let rows = sigma.numel() / p.n;
            let mut z = vec![S::zero(); sigma.numel()];
            for (i, zv) in z.iter_mut().enumerate() {
                if mask[i % p.n] == 1 {
                    *zv = S::of(rng.sample::<f64, _>(StandardNormal));
                }
            }
            debug_assert_eq!(rows * p.n, sigma.numel());
            let noise = Tensor::from_vec(&[rows, p.n], z)?;
            let s_tilde = perturb_with(s, &sigma, &noise)?;
            Ok((s_tilde, sigma, mask))
        }
    }
}

/// Per-pixel sparse expert weights: keep the K largest entries of each row,
/// softmax over the kept entries, zeros elsewhere.
pub fn sparse_select<S: Scalar>(s_tilde: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
    s_tilde.topk_softmax(k)
}

/// y(i) = sum_n Se(i,n) · F_n(x)(i). Experts whose entire weight column is
/// zero are never evaluated.
pub fn dispatch<S: Scalar>(
    x: &Tensor<S>,
    se: &Tensor<S>,
    bank: &ExpertBank<S>,
) -> Result<Tensor<S>> {
    let sx = x.shape();
    if sx.len() != 4 {
        return Err(Error::Shape(format!("dispatch: x {:?}", sx)));
    }
    let (b, h, w) = (sx[0], sx[2], sx[3]);
    let p = b * h * w;
    let n = bank.experts.len();
    if se.shape() != [p, n] {
        return Err(Error::Shape(format!(
            "dispatch: Se {:?} vs [{p},{n}]",
            se.shape()
        )));
    }
    let mut out: Option<Tensor<S>> = None;
    for (ei, expert) in bank.experts.iter().enumerate() {
        let active = se.data().iter().skip(ei).step_by(n).any(|v| *v != S::zero());
        if !active {
            continue;
        }
        // column ei with gradient flow: Se · onehot(ei)
        let mut hot = vec![S::zero(); n];
        hot[ei] = S::one();
        let col = se
            .matmul(&Tensor::from_vec(&[n, 1], hot)?)?
            .reshape(&[b, 1, h, w])?;
        let weighted = expert.forward(x)?.mul_spatial(&col)?;
        out = Some(match out {
            Some(acc) => acc.add(&weighted)?,
            None => weighted,
        });
    }
    match out {
        Some(y) => Ok(y),
        // every weight zero: the convex combination of nothing is zero
        None => Ok(Tensor::zeros(sx)),
    }
}

/// One full router: prompt projection, scoring, perturbation, sparse
/// selection and dispatch.
pub struct Dder<S: Scalar> {
    pub proj_w: Tensor<S>,
    pub proj_b: Tensor<S>,
    pub params: RouterParams<S>,
    pub bank: ExpertBank<S>,
}

impl<S: Scalar> Dder<S> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        d: usize,
        m: usize,
        num_classes: usize,
        n: usize,
        k: usize,
    ) -> Result<Self> {
        Ok(Dder {
            proj_w: param_fan_in(rng, &[m, d], m)?,
            proj_b: param_zeros(&[d])?,
            params: RouterParams::new(rng, d, num_classes, n, k)?,
            bank: ExpertBank::new(rng, d, n)?,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<S>,
        t_task: &Tensor<S>,
        d_g: &Tensor<S>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<S>, RoutingState<S>)> {
        let x_p = joint_features(x, t_task, &self.proj_w, &self.proj_b)?;
        let (score, bias, s) = route_scores(&x_p, d_g, &self.params)?;
        let (s_tilde, sigma, eps_mask) = perturb(&s, &x_p, &self.params, mode, rng)?;
        let se = sparse_select(&s_tilde, self.params.k)?;
        let y = dispatch(x, &se, &self.bank)?;
        Ok((y, RoutingState { score, bias, s, sigma, s_tilde, eps_mask, se }))
    }
}

impl<S: Scalar> Module<S> for Dder<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.proj_w"), &mut self.proj_w);
        f(format!("{prefix}.proj_b"), &mut self.proj_b);
        self.params.visit_params(&format!("{prefix}.router"), f);
        self.bank.visit_params(&format!("{prefix}.bank"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::max_rel_err;
    use crate::prompt::{task_prompt, PromptLibrary};
    use crate::tensor::init::randn_vec;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_dg(b: usize, d: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
        let logits = Tensor::<f64>::from_vec(&[b, d], randn_vec(r, b * d, 1.0)).unwrap();
        logits.softmax_lastdim().unwrap().detach()
    }

    #[test]
    fn joint_features_keeps_x_in_front() {
        let mut r = rng(0);
        let x = Tensor::<f64>::from_vec(&[2, 3, 4, 4], randn_vec(&mut r, 96, 1.0)).unwrap();
        let t = Tensor::<f64>::from_vec(&[2, 5], randn_vec(&mut r, 10, 1.0)).unwrap();
        let pw = Tensor::<f64>::from_vec(&[5, 3], randn_vec(&mut r, 15, 1.0)).unwrap();
        let pb = Tensor::<f64>::from_vec(&[3], randn_vec(&mut r, 3, 1.0)).unwrap();
        let xp = joint_features(&x, &t, &pw, &pb).unwrap();
        assert_eq!(xp.shape(), &[2, 6, 4, 4]);
        for bi in 0..2 {
            let src = &x.data()[bi * 48..(bi + 1) * 48];
            let dst = &xp.data()[bi * 96..bi * 96 + 48];
            assert_eq!(src, dst);
        }
    }

    #[test]
    fn joint_features_zero_prompt_zeroes_tail_channels() {
        let mut r = rng(1);
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 3], randn_vec(&mut r, 18, 1.0)).unwrap();
        let t = Tensor::<f64>::zeros(&[1, 4]);
        let pw = Tensor::<f64>::from_vec(&[4, 2], randn_vec(&mut r, 8, 1.0)).unwrap();
        let pb = Tensor::<f64>::zeros(&[2]);
        let xp = joint_features(&x, &t, &pw, &pb).unwrap();
        assert!(xp.data()[18..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn route_scores_alpha_zero_disables_bias() {
        let mut r = rng(2);
        let mut p = RouterParams::<f64>::new(&mut r, 2, 5, 4, 2).unwrap();
        p.alpha = Tensor::param(&[4], vec![0.0; 4]).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 3, 3], randn_vec(&mut r, 36, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        let (score, _, s) = route_scores(&xp, &dg, &p).unwrap();
        assert_eq!(score.data(), s.data());
    }

    #[test]
    fn route_scores_one_hot_prior_selects_bias_row() {
        let mut r = rng(3);
        let p = RouterParams::<f64>::new(&mut r, 2, 5, 4, 2).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 2, 2], randn_vec(&mut r, 16, 1.0)).unwrap();
        let dg = Tensor::from_vec(&[1, 5], vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (_, bias, _) = route_scores(&xp, &dg, &p).unwrap();
        let row = &p.w_b.data()[2 * 4..3 * 4];
        for pixel in bias.data().chunks(4) {
            for (a, b) in pixel.iter().zip(row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn route_scores_bias_grad_matches_finite_differences() {
        let mut r = rng(4);
        let p = RouterParams::<f64>::new(&mut r, 2, 5, 4, 2).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 2, 2], randn_vec(&mut r, 16, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        let w_b = p.w_b.clone();
        let (w_g, alpha, n) = (p.w_g.clone(), p.alpha.clone(), p.n);
        let k = p.k;
        let err = max_rel_err(
            move |ps| {
                let params = RouterParams {
                    w_g: w_g.clone(),
                    w_b: ps[0].clone(),
                    w_n: Tensor::zeros(&[4, 4]),
                    alpha: alpha.clone(),
                    k,
                    n,
                };
                let (_, _, s) = route_scores(&xp, &dg, &params)?;
                Ok(s.sum_all())
            },
            &[w_b],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn perturb_infer_mode_is_bit_exact() {
        let mut r = rng(5);
        let p = RouterParams::<f64>::new(&mut r, 2, 5, 4, 2).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 3, 3], randn_vec(&mut r, 36, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        let (_, _, s) = route_scores(&xp, &dg, &p).unwrap();
        let (s_tilde, _, mask) = perturb(&s, &xp, &p, Mode::Infer, &mut r).unwrap();
        assert_eq!(s.data(), s_tilde.data());
        assert!(mask.iter().all(|&m| m == 0));
    }

    #[test]
    fn zero_noise_weights_give_ln2_sigma() {
        let mut r = rng(6);
        let p = RouterParams::<f64>::new(&mut r, 2, 5, 4, 2).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 2, 2], randn_vec(&mut r, 16, 1.0)).unwrap();
        let sigma = noise_sigma(&xp, &p).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(sigma.data().iter().all(|v| (v - ln2).abs() < 1e-12));
    }

    #[test]
    fn perturb_train_mode_is_seed_reproducible() {
        let mut r = rng(7);
        let p = RouterParams::<f64>::new(&mut r, 2, 5, 4, 2).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 3, 3], randn_vec(&mut r, 36, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        let (_, _, s) = route_scores(&xp, &dg, &p).unwrap();
        let mut ra = rng(99);
        let mut rb = rng(99);
        let (ta, _, ma) = perturb(&s, &xp, &p, Mode::Train, &mut ra).unwrap();
        let (tb, _, mb) = perturb(&s, &xp, &p, Mode::Train, &mut rb).unwrap();
        assert_eq!(ta.data(), tb.data());
        assert_eq!(ma, mb);
    }

    #[test]
    fn dispatch_single_expert_with_unit_weights() {
        let mut r = rng(8);
        let bank = ExpertBank::<f64>::new(&mut r, 3, 1).unwrap();
        let x = Tensor::<f64>::from_vec(&[1, 3, 2, 2], randn_vec(&mut r, 12, 1.0)).unwrap();
        let se = Tensor::from_vec(&[4, 1], vec![1.0; 4]).unwrap();
        let y = dispatch(&x, &se, &bank).unwrap();
        let want = bank.experts[0].forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_experts_make_dispatch_identity() {
        let mut r = rng(9);
        let mut bank = ExpertBank::<f64>::new(&mut r, 2, 2).unwrap();
        for e in &mut bank.experts {
            e.conv2.zero().unwrap(); // residual path only
        }
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], randn_vec(&mut r, 8, 1.0)).unwrap();
        // arbitrary rows summing to 1
        let se = Tensor::from_vec(&[4, 2], vec![0.3, 0.7, 1.0, 0.0, 0.5, 0.5, 0.0, 1.0]).unwrap();
        let y = dispatch(&x, &se, &bank).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_dispatch_equals_dense_oracle() {
        let mut r = rng(10);
        let n = 4;
        let bank = ExpertBank::<f64>::new(&mut r, 3, n).unwrap();
        let x = Tensor::<f64>::from_vec(&[2, 3, 3, 3], randn_vec(&mut r, 54, 1.0)).unwrap();
        let p = 2 * 9;
        let logits = Tensor::<f64>::from_vec(&[p, n], randn_vec(&mut r, p * n, 1.0)).unwrap();
        let se = sparse_select(&logits, 2).unwrap();
        let y = dispatch(&x, &se, &bank).unwrap();

        // dense oracle: evaluate every expert everywhere, weight per pixel
        let outs: Vec<Tensor<f64>> =
            bank.experts.iter().map(|e| e.forward(&x).unwrap()).collect();
        let (h, w) = (3usize, 3usize);
        let hw = h * w;
        for bi in 0..2 {
            for c in 0..3 {
                for pix in 0..hw {
                    let mut want = 0.0;
                    for (ei, o) in outs.iter().enumerate() {
                        let weight = se.data()[(bi * hw + pix) * n + ei];
                        want += weight * o.data()[(bi * 3 + c) * hw + pix];
                    }
                    let got = y.data()[(bi * 3 + c) * hw + pix];
                    assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn dispatch_is_linear_in_selection_weights() {
        let mut r = rng(11);
        let n = 3;
        let bank = ExpertBank::<f64>::new(&mut r, 2, n).unwrap();
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], randn_vec(&mut r, 8, 1.0)).unwrap();
        let p = 4;
        let se1 = sparse_select(
            &Tensor::<f64>::from_vec(&[p, n], randn_vec(&mut r, p * n, 1.0)).unwrap(),
            2,
        )
        .unwrap()
        .detach();
        let se2 = sparse_select(
            &Tensor::<f64>::from_vec(&[p, n], randn_vec(&mut r, p * n, 1.0)).unwrap(),
            2,
        )
        .unwrap()
        .detach();
        let a = 0.3;
        let mix = se1.mul_scalar(a).add(&se2.mul_scalar(1.0 - a)).unwrap();
        let y_mix = dispatch(&x, &mix, &bank).unwrap();
        let y1 = dispatch(&x, &se1, &bank).unwrap();
        let y2 = dispatch(&x, &se2, &bank).unwrap();
        for i in 0..y_mix.numel() {
            let want = a * y1.data()[i] + (1.0 - a) * y2.data()[i];
            assert!((y_mix.data()[i] - want).abs() <= 1e-5);
        }
    }

    #[test]
    fn router_infer_forward_is_deterministic_and_sparse() {
        let mut r = rng(12);
        let dder = Dder::<f64>::new(&mut r, 3, 6, 5, 4, 2).unwrap();
        let lib = PromptLibrary::<f64>::new(&mut r, 4, 6).unwrap();
        let q = Tensor::from_vec(&[1, 4], vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let t = task_prompt(&q, &lib).unwrap();
        let x = Tensor::<f64>::from_vec(&[1, 3, 4, 4], randn_vec(&mut r, 48, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        let mut r1 = rng(0);
        let mut r2 = rng(1); // different rng must not matter in infer mode
        let (y1, st1) = dder.forward(&x, &t, &dg, Mode::Infer, &mut r1).unwrap();
        let (y2, st2) = dder.forward(&x, &t, &dg, Mode::Infer, &mut r2).unwrap();
        assert_eq!(y1.data(), y2.data());
        assert_eq!(st1.se.data(), st2.se.data());
        for row in st1.se.data().chunks(4) {
            let nz = row.iter().filter(|&&v| v != 0.0).count();
            assert_eq!(nz, 2);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn router_end_to_end_grad_matches_finite_differences() {
        let mut r = rng(13);
        let dder = Dder::<f64>::new(&mut r, 2, 4, 5, 4, 2).unwrap();
        let x = Tensor::param(&[1, 2, 4, 4], randn_vec(&mut r, 32, 1.0)).unwrap();
        let t = Tensor::<f64>::from_vec(&[1, 4], randn_vec(&mut r, 4, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        let w_g = dder.params.w_g.clone();
        let err = max_rel_err(
            move |ps| {
                let mut noise_rng = rng(0);
                let params = RouterParams {
                    w_g: ps[1].clone(),
                    w_b: dder.params.w_b.clone(),
                    w_n: dder.params.w_n.clone(),
                    alpha: dder.params.alpha.clone(),
                    k: dder.params.k,
                    n: dder.params.n,
                };
                let x_p = joint_features(&ps[0], &t, &dder.proj_w, &dder.proj_b)?;
                let (_, _, s) = route_scores(&x_p, &dg, &params)?;
                let (s_tilde, _, _) = perturb(&s, &x_p, &params, Mode::Infer, &mut noise_rng)?;
                let se = sparse_select(&s_tilde, params.k)?;
                let y = dispatch(&ps[0], &se, &dder.bank)?;
                Ok(y.mean_all())
            },
            &[x, w_g],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn noise_path_grad_matches_finite_differences() {
        let mut r = rng(14);
        let p = RouterParams::<f64>::new(&mut r, 2, 5, 3, 2).unwrap();
        let xp = Tensor::<f64>::from_vec(&[1, 4, 2, 2], randn_vec(&mut r, 16, 1.0)).unwrap();
        let dg = random_dg(1, 5, &mut r);
        // fixed masked noise field, as drawn once during a real train pass
        let noise = Tensor::<f64>::from_vec(&[4, 3], randn_vec(&mut r, 12, 1.0)).unwrap();
        let w_n = param_randn::<f64>(&mut r, &[4, 3], 0.5).unwrap();
        let probe = Tensor::<f64>::from_vec(&[4, 3], randn_vec(&mut r, 12, 1.0)).unwrap();
        let (w_g, w_b, alpha) = (p.w_g.clone(), p.w_b.clone(), p.alpha.clone());
        let err = max_rel_err(
            move |ps| {
                let params = RouterParams {
                    w_g: w_g.clone(),
                    w_b: w_b.clone(),
                    w_n: ps[0].clone(),
                    alpha: alpha.clone(),
                    k: 2,
                    n: 3,
                };
                let (_, _, s) = route_scores(&xp, &dg, &params)?;
                let sigma = noise_sigma(&xp, &params)?;
                let s_tilde = perturb_with(&s, &sigma, &noise)?;
                Ok(sparse_select(&s_tilde, 2)?.mul(&probe)?.sum_all())
            },
            &[w_n],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn sparse_select_is_row_shift_invariant() {
        let mut r = rng(15);
        let logits = Tensor::<f64>::from_vec(&[6, 4], randn_vec(&mut r, 24, 1.0)).unwrap();
        let se = sparse_select(&logits, 2).unwrap();
        let shifted_data: Vec<f64> = logits
            .data()
            .chunks(4)
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |v| v + i as f64 * 3.7 - 5.0))
            .collect();
        let shifted = Tensor::from_vec(&[6, 4], shifted_data).unwrap();
        let se2 = sparse_select(&shifted, 2).unwrap();
        for (a, b) in se.data().iter().zip(se2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
