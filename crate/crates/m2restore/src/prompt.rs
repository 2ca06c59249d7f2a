//! Task prompts and degradation priors.
//!
//! A small conv stack summarizes the degraded image into prompt weights q,
//! which retrieve a task prompt from a learnable library. Separately, a
//! prior provider supplies a global degradation probability vector d_g and a
//! feature embedding P_f; both an oracle (label-driven) and a learned
//! classifier provider exist behind one trait.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, Sample, NUM_CLASSES, UNKNOWN_CLASS};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module};
use crate::optim::Adam;
use crate::tensor::init::{param_randn, param_zeros, randn_vec};
use crate::tensor::{Padding, Scalar, Tensor};

/// Learnable base prompts tau[C_p, M].
pub struct PromptLibrary<S: Scalar> {
    pub tau: Tensor<S>,
}

impl<S: Scalar> PromptLibrary<S> {
    pub fn new(rng: &mut ChaCha8Rng, c_p: usize, m: usize) -> Result<Self> {
        if c_p < 2 {
            return Err(Error::Config(format!("prompt library needs >= 2 prompts, got {c_p}")));
        }
        Ok(PromptLibrary { tau: param_randn(rng, &[c_p, m], 0.5)? })
    }

    pub fn num_prompts(&self) -> usize {
        self.tau.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tau.shape()[1]
    }
}

impl<S: Scalar> Module<S> for PromptLibrary<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.tau"), &mut self.tau);
    }
}

/// Image -> prompt-weight head: two 3x3 convolutions, global average pool,
/// linear projection, softmax over the C_p prompts.
pub struct PromptGen<S: Scalar> {
    conv1: Conv2d<S>,
    conv2: Conv2d<S>,
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

const PROMPT_FEAT: usize = 8;

impl<S: Scalar> PromptGen<S> {
    pub fn new(rng: &mut ChaCha8Rng, c_p: usize) -> Result<Self> {
        Ok(PromptGen {
            conv1: Conv2d::new(rng, 3, PROMPT_FEAT, 3, 1, 1, Padding::Same, true)?,
            conv2: Conv2d::new(rng, PROMPT_FEAT, PROMPT_FEAT, 3, 1, 1, Padding::Same, true)?,
            w: param_randn(rng, &[PROMPT_FEAT, c_p], (PROMPT_FEAT as f64).sqrt().recip())?,
            b: param_zeros(&[c_p])?,
        })
    }

    /// Zero every weight; the output collapses to the uniform distribution.
    pub fn zero(&mut self) -> Result<()> {
        self.conv1.zero()?;
        self.conv2.zero()?;
        self.w = param_zeros(self.w.shape())?;
        self.b = param_zeros(self.b.shape())?;
        Ok(())
    }

    /// q[B, C_p]: rows are probability vectors.
    pub fn prompt_weights(&self, img: &Tensor<S>) -> Result<Tensor<S>> {
        let f = self.conv1.forward(img)?.gelu();
        let f = self.conv2.forward(&f)?.gelu();
        f.global_avg_pool()?
            .linear(&self.w, Some(&self.b))?
            .softmax_lastdim()
    }
}

impl<S: Scalar> Module<S> for PromptGen<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

/// T_task[B, M] = GELU(q · tau).
pub fn task_prompt<S: Scalar>(q: &Tensor<S>, lib: &PromptLibrary<S>) -> Result<Tensor<S>> {
    if q.shape().len() != 2 || q.shape()[1] != lib.num_prompts() {
        return Err(Error::Shape(format!(
            "task_prompt: q {:?} vs library with {} prompts",
            q.shape(),
            lib.num_prompts()
        )));
    }
    Ok(q.matmul(&lib.tau)?.gelu())
}

/// Global degradation evidence for one image: class probabilities d_g[D] and
/// a feature embedding P_f[F_p]. Constant with respect to the restoration
/// graph (no gradients flow into the provider from the restorer).
#[derive(Clone, Debug)]
pub struct DegradationPrior<S: Scalar> {
    pub d_g: Tensor<S>,
    pub p_f: Tensor<S>,
}

impl<S: Scalar> DegradationPrior<S> {
    /// Stack per-image priors into batch tensors ([B,D], [B,F_p]).
    pub fn stack(priors: &[DegradationPrior<S>]) -> Result<(Tensor<S>, Tensor<S>)> {
        if priors.is_empty() {
            return Err(Error::Contract("prior stack of zero images".into()));
        }
        let d = priors[0].d_g.numel();
        let f = priors[0].p_f.numel();
        let mut dg = Vec::with_capacity(priors.len() * d);
        let mut pf = Vec::with_capacity(priors.len() * f);
        for p in priors {
            dg.extend_from_slice(p.d_g.data());
            pf.extend_from_slice(p.p_f.data());
        }
        Ok((
            Tensor::from_vec(&[priors.len(), d], dg)?,
            Tensor::from_vec(&[priors.len(), f], pf)?,
        ))
    }
}

/// Source of degradation priors. Implementations must be interchangeable:
/// same output shapes for the same (D, F_p).
pub trait PriorProvider<S: Scalar> {
    /// `label` is the ground-truth degradation class where known; providers
    /// that infer the prior from pixels may ignore it.
    fn prior(&self, img: &Image, label: Option<usize>) -> Result<DegradationPrior<S>>;

    fn num_classes(&self) -> usize;
    fn feature_width(&self) -> usize;
}

/// Label-driven provider: smoothed one-hot d_g plus a fixed seeded per-class
/// embedding. Stands in for a frozen pretrained classifier.
pub struct OraclePrior {
    pub f_p: usize,
    pub seed: u64,
    embeddings: Vec<Vec<f64>>,
    smoothing: f64,
}

impl OraclePrior {
    pub fn new(f_p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..NUM_CLASSES)
            .map(|_| randn_vec::<f64>(&mut rng, f_p, 1.0))
            .collect();
        OraclePrior { f_p, seed, embeddings, smoothing: 0.02 }
    }
}

impl<S: Scalar> PriorProvider<S> for OraclePrior {
    fn prior(&self, _img: &Image, label: Option<usize>) -> Result<DegradationPrior<S>> {
        let class = match label {
            Some(l) if l < NUM_CLASSES => l,
            _ => UNKNOWN_CLASS,
        };
        let eps = self.smoothing;
        let hot = 1.0 - eps * (NUM_CLASSES - 1) as f64;
        let dg: Vec<S> = (0..NUM_CLASSES)
            .map(|i| S::of(if i == class { hot } else { eps }))
            .collect();
        let pf: Vec<S> = self.embeddings[class].iter().map(|&v| S::of(v)).collect();
        Ok(DegradationPrior {
            d_g: Tensor::from_vec(&[NUM_CLASSES], dg)?,
            p_f: Tensor::from_vec(&[self.f_p], pf)?,
        })
    }

    fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    fn feature_width(&self) -> usize {
        self.f_p
    }
}

/// Four-layer convolutional degradation classifier. `prior` refuses to run
/// until `fit` has been called.
pub struct LearnedPrior<S: Scalar> {
    conv1: Conv2d<S>,
    conv2: Conv2d<S>,
    conv3: Conv2d<S>,
    conv4: Conv2d<S>,
    head_w: Tensor<S>,
    head_b: Tensor<S>,
    f_p: usize,
    trained: bool,
}

impl<S: Scalar> LearnedPrior<S> {
    pub fn new(rng: &mut ChaCha8Rng, f_p: usize) -> Result<Self> {
        Ok(LearnedPrior {
            conv1: Conv2d::new(rng, 3, 16, 3, 1, 2, Padding::Same, true)?,
            conv2: Conv2d::new(rng, 16, 32, 3, 1, 2, Padding::Same, true)?,
            conv3: Conv2d::new(rng, 32, 64, 3, 1, 2, Padding::Same, true)?,
            conv4: Conv2d::new(rng, 64, f_p, 1, 1, 1, Padding::Same, true)?,
            head_w: param_randn(rng, &[f_p, NUM_CLASSES], (f_p as f64).sqrt().recip())?,
            head_b: param_zeros(&[NUM_CLASSES])?,
            f_p,
            trained: false,
        })
    }

    /// (pooled penultimate features [B,F_p], class logits [B,D]).
    fn features_and_logits(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let f = self.conv1.forward(x)?.gelu();
        let f = self.conv2.forward(&f)?.gelu();
        let f = self.conv3.forward(&f)?.gelu();
        let f = self.conv4.forward(&f)?.gelu();
        let pooled = f.global_avg_pool()?;
        let logits = pooled.linear(&self.head_w, Some(&self.head_b))?;
        Ok((pooled, logits))
    }

    fn batch_tensor(images: &[&Image]) -> Result<Tensor<S>> {
        let (h, w) = (images[0].h, images[0].w);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.h != h || img.w != w {
                return Err(Error::Shape("classifier batch with mixed image sizes".into()));
            }
            data.extend(img.data.iter().map(|&v| S::of(v as f64)));
        }
        Tensor::from_vec(&[images.len(), 3, h, w], data)
    }

    /// Train on degraded images labeled by their degradation type.
    pub fn fit(
        &mut self,
        samples: &[Sample],
        steps: usize,
        batch: usize,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Contract("classifier training set is empty".into()));
        }
        use rand::Rng as _;
        let mut opt = Adam::new(lr);
        for _ in 0..steps {
            let picks: Vec<usize> =
                (0..batch).map(|_| rng.gen_range(0..samples.len())).collect();
            let images: Vec<&Image> = picks.iter().map(|&i| &samples[i].degraded).collect();
            let labels: Vec<usize> = picks.iter().map(|&i| samples[i].label).collect();
            let x = Self::batch_tensor(&images)?;
            let (_, logits) = self.features_and_logits(&x)?;
            let loss = logits.cross_entropy(&labels)?;
            loss.backward()?;
            opt.step(self)?;
        }
        self.trained = true;
        Ok(())
    }

    /// Fraction of samples whose argmax class matches the label.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        let mut hits = 0usize;
        for s in samples {
            let x = Self::batch_tensor(&[&s.degraded])?;
            let (_, logits) = self.features_and_logits(&x)?;
            let row = logits.data();
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            if argmax == s.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }
}

impl<S: Scalar> PriorProvider<S> for LearnedPrior<S> {
    fn prior(&self, img: &Image, _label: Option<usize>) -> Result<DegradationPrior<S>> {
        if !self.trained {
            return Err(Error::Contract(
                "learned prior provider used before training; call fit first".into(),
            ));
        }
        let x = Self::batch_tensor(&[img])?;
        let (pooled, logits) = self.features_and_logits(&x)?;
        let dg = logits.softmax_lastdim()?;
        Ok(DegradationPrior {
            d_g: Tensor::from_vec(&[NUM_CLASSES], dg.data().to_vec())?,
            p_f: Tensor::from_vec(&[self.f_p], pooled.data().to_vec())?,
        })
    }

    fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    fn feature_width(&self) -> usize {
        self.f_p
    }
}

impl<S: Scalar> Module<S> for LearnedPrior<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.conv3.visit_params(&format!("{prefix}.conv3"), f);
        self.conv4.visit_params(&format!("{prefix}.conv4"), f);
        f(format!("{prefix}.head_w"), &mut self.head_w);
        f(format!("{prefix}.head_b"), &mut self.head_b);
    }
}
