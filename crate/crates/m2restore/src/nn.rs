//! Composite network blocks: patch embedding, channel-attention transformer
//! blocks, and down/upsampling, assembled from the tensor primitives.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::init::{param_fan_in, param_full, param_zeros};
use crate::tensor::{Padding, Scalar, Tensor};

/// Uniform access to every trainable leaf of a module tree. Visitation order
/// is deterministic, so the same walk drives the optimizer, checkpointing
/// and parameter counting.
pub trait Module<S: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }
}

/// 2-D convolution layer with owned kernel/bias.
pub struct Conv2d<S: Scalar> {
    pub kernel: Tensor<S>,
    pub bias: Option<Tensor<S>>,
    pub groups: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        groups: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        if !c_in.is_multiple_of(groups) || !c_out.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "conv groups {groups} must divide channels {c_in}->{c_out}"
            )));
        }
        let fan_in = (c_in / groups) * k * k;
        Ok(Conv2d {
            kernel: param_fan_in(rng, &[c_out, c_in / groups, k, k], fan_in)?,
            bias: if bias { Some(param_zeros(&[c_out])?) } else { None },
            groups,
            stride,
            padding,
        })
    }

    /// Pointwise 1x1 convolution, the workhorse of channel mixing.
    pub fn pointwise(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(rng, c_in, c_out, 1, 1, 1, Padding::Same, true)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.conv2d(&self.kernel, self.bias.as_ref(), self.groups, self.stride, self.padding)
    }

    /// Overwrite the kernel (and bias) with zeros; used for identity-start
    /// output heads.
    pub fn zero(&mut self) -> Result<()> {
        self.kernel = param_zeros(self.kernel.shape())?;
        if let Some(b) = &self.bias {
            self.bias = Some(param_zeros(b.shape())?);
        }
        Ok(())
    }
}

impl<S: Scalar> Module<S> for Conv2d<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.kernel"), &mut self.kernel);
        if let Some(b) = &mut self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }
}

/// Per-position channel normalization with learned affine.
pub struct LayerNorm2d<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub eps: S,
}

impl<S: Scalar> LayerNorm2d<S> {
    pub fn new(c: usize) -> Result<Self> {
        Ok(LayerNorm2d {
            gamma: param_full(&[c], S::one())?,
            beta: param_zeros(&[c])?,
            eps: S::of(1e-6),
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.layer_norm_channels(&self.gamma, &self.beta, self.eps)
    }
}

impl<S: Scalar> Module<S> for LayerNorm2d<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Shape hyperparameters of one transformer block.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub channels: usize,
    pub expansion: f64,
    pub heads: usize,
}

impl BlockParams {
    pub fn new(channels: usize, expansion: f64, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "heads {heads} must divide channels {channels}"
            )));
        }
        if expansion < 1.0 {
            return Err(Error::Config(format!("expansion {expansion} < 1")));
        }
        Ok(BlockParams { channels, expansion, heads })
    }

    fn hidden(&self) -> usize {
        ((self.channels as f64) * self.expansion).round() as usize
    }
}

/// Residual transformer block with channel attention: attention weights are
/// computed between channels (per head) rather than between positions, so
/// cost stays linear in the pixel count. Zeroing the projection and second
/// feed-forward layer makes the block an exact identity.
pub struct TransformerBlock<S: Scalar> {
    pub p: BlockParams,
    ln_attn: LayerNorm2d<S>,
    q: Conv2d<S>,
    k: Conv2d<S>,
    v: Conv2d<S>,
    proj: Conv2d<S>,
    ln_ff: LayerNorm2d<S>,
    ff_in: Conv2d<S>,
    ff_out: Conv2d<S>,
}

impl<S: Scalar> TransformerBlock<S> {
    pub fn new(rng: &mut ChaCha8Rng, p: BlockParams) -> Result<Self> {
        let c = p.channels;
        Ok(TransformerBlock {
            p,
            ln_attn: LayerNorm2d::new(c)?,
            q: Conv2d::pointwise(rng, c, c)?,
            k: Conv2d::pointwise(rng, c, c)?,
            v: Conv2d::pointwise(rng, c, c)?,
            proj: Conv2d::pointwise(rng, c, c)?,
            ln_ff: LayerNorm2d::new(c)?,
            ff_in: Conv2d::pointwise(rng, c, p.hidden())?,
            ff_out: Conv2d::pointwise(rng, p.hidden(), c)?,
        })
    }

    /// Zero every sublayer weight so the block is the identity map. Test and
    /// diagnostics hook.
    pub fn zero_sublayers(&mut self) -> Result<()> {
        for conv in [&mut self.q, &mut self.k, &mut self.v, &mut self.proj] {
            conv.zero()?;
        }
        self.ff_in.zero()?;
        self.ff_out.zero()?;
        Ok(())
    }

    /// [B,C,HW] per-head view: [B*heads, C/heads, HW].
    fn to_heads(&self, t: &Tensor<S>, b: usize, hw: usize) -> Result<Tensor<S>> {
        let c = self.p.channels;
        let ch = c / self.p.heads;
        t.chw_to_lc()?
            .transpose_last2()?
            .reshape(&[b * self.p.heads, ch, hw])
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.p.channels {
            return Err(Error::Config(format!(
                "transformer block expects {} channels, input {:?}",
                self.p.channels, s
            )));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;

        let normed = self.ln_attn.forward(x)?;
        let q = self.to_heads(&self.q.forward(&normed)?, b, hw)?;
        let k = self.to_heads(&self.k.forward(&normed)?, b, hw)?;
        let v = self.to_heads(&self.v.forward(&normed)?, b, hw)?;
        let scale = S::of(1.0 / (hw as f64).sqrt());
        let attn = q
            .bmm(&k.transpose_last2()?)?
            .mul_scalar(scale)
            .softmax_lastdim()?;
        let mixed = attn
            .bmm(&v)?
            .reshape(&[b, c, hw])?
            .transpose_last2()?
            .lc_to_chw(h, w)?;
        let x = x.add(&self.proj.forward(&mixed)?)?;

        let normed = self.ln_ff.forward(&x)?;
        let ff = self.ff_out.forward(&self.ff_in.forward(&normed)?.gelu())?;
        x.add(&ff)
    }
}

impl<S: Scalar> Module<S> for TransformerBlock<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.ln_attn.visit_params(&format!("{prefix}.ln_attn"), f);
        self.q.visit_params(&format!("{prefix}.q"), f);
        self.k.visit_params(&format!("{prefix}.k"), f);
        self.v.visit_params(&format!("{prefix}.v"), f);
        self.proj.visit_params(&format!("{prefix}.proj"), f);
        self.ln_ff.visit_params(&format!("{prefix}.ln_ff"), f);
        self.ff_in.visit_params(&format!("{prefix}.ff_in"), f);
        self.ff_out.visit_params(&format!("{prefix}.ff_out"), f);
    }
}

/// 3x3 convolution lifting an RGB image to C feature channels.
pub struct PatchEmbed<S: Scalar> {
    conv: Conv2d<S>,
}

impl<S: Scalar> PatchEmbed<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> Result<Self> {
        Ok(PatchEmbed { conv: Conv2d::new(rng, 3, c, 3, 1, 1, Padding::Same, true)? })
    }

    /// Direct access for tests that construct identity-like kernels.
    pub fn conv_mut(&mut self) -> &mut Conv2d<S> {
        &mut self.conv
    }

    pub fn forward(&self, img: &Tensor<S>) -> Result<Tensor<S>> {
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("patch_embed expects [B,3,H,W], got {:?}", s)));
        }
        if s[2] < 8 || s[3] < 8 {
            return Err(Error::Contract(format!(
                "patch_embed needs spatial extents >= 8, got {}x{}",
                s[2], s[3]
            )));
        }
        self.conv.forward(img)
    }
}

impl<S: Scalar> Module<S> for PatchEmbed<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.conv.visit_params(&format!("{prefix}.embed"), f);
    }
}

/// Strided 3x3 convolution: [B,C,H,W] -> [B,2C,H/2,W/2].
pub struct Downsample<S: Scalar> {
    conv: Conv2d<S>,
}

impl<S: Scalar> Downsample<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> Result<Self> {
        Ok(Downsample { conv: Conv2d::new(rng, c, 2 * c, 3, 1, 2, Padding::Same, true)? })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "downsample needs even spatial extents, got {:?}",
                s
            )));
        }
        self.conv.forward(x)
    }
}

impl<S: Scalar> Module<S> for Downsample<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.conv.visit_params(&format!("{prefix}.down"), f);
    }
}

/// Nearest-neighbor 2x upsample followed by a 1x1 halving convolution:
/// [B,C,H,W] -> [B,C/2,2H,2W].
pub struct Upsample<S: Scalar> {
    conv: Conv2d<S>,
}

impl<S: Scalar> Upsample<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> Result<Self> {
        if !c.is_multiple_of(2) {
            return Err(Error::Contract(format!("upsample needs even channels, got {c}")));
        }
        Ok(Upsample { conv: Conv2d::pointwise(rng, c, c / 2)? })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.conv.forward(&x.nearest_upsample2()?)
    }
}

impl<S: Scalar> Module<S> for Upsample<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.conv.visit_params(&format!("{prefix}.up"), f);
    }
}
