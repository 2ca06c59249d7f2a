//! Dual-branch bottleneck: a depthwise CNN branch for local texture, a
//! selective state-space branch for global context, fused per pixel and
//! channel by a dynamic sigmoid gate conditioned on the degradation features.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, LayerNorm2d, Module};
use crate::tensor::init::{param_fan_in, param_randn, param_zeros};
use crate::tensor::{selective_scan, Padding, Scalar, Tensor};

/// Selective SSM parameters for feature width C and state size S. The decay
/// matrix is stored as log-magnitude; the effective A = -exp(A_log) is
/// always strictly negative, so the recurrence is stable for any Delta > 0.
pub struct SsmParams<S: Scalar> {
    pub a_log: Tensor<S>,
    pub proj_b: Tensor<S>,
    pub proj_c: Tensor<S>,
    pub proj_delta: Tensor<S>,
    pub delta_bias: Tensor<S>,
}

impl<S: Scalar> SsmParams<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize, state: usize) -> Result<Self> {
        Ok(SsmParams {
            a_log: param_randn(rng, &[c, state], 0.5)?,
            proj_b: param_fan_in(rng, &[c, state], c)?,
            proj_c: param_fan_in(rng, &[c, state], c)?,
            proj_delta: param_fan_in(rng, &[c, 1], c)?,
            // softplus(0) = ln 2 keeps the initial step size moderate
            delta_bias: param_zeros(&[1])?,
        })
    }

    pub fn state_size(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Effective decay matrix A = -exp(A_log), differentiable.
    pub fn a(&self) -> Result<Tensor<S>> {
        Ok(self.a_log.exp()?.neg())
    }

    /// Run the selective scan over u[B,L,C]: input-dependent B_t, C_t and
    /// Delta_t are linear projections of u_t.
    pub fn scan(&self, u: &Tensor<S>) -> Result<Tensor<S>> {
        let s = u.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("ssm scan expects [B,L,C], got {:?}", s)));
        }
        let (b, l) = (s[0], s[1]);
        let delta = u
            .linear(&self.proj_delta, None)?
            .reshape(&[b, l])?
            .add(&self.delta_bias)?
            .softplus();
        let bmat = u.linear(&self.proj_b, None)?;
        let cmat = u.linear(&self.proj_c, None)?;
        selective_scan(u, &delta, &bmat, &cmat, &self.a()?)
    }
}

impl<S: Scalar> Module<S> for SsmParams<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.a_log"), &mut self.a_log);
        f(format!("{prefix}.proj_b"), &mut self.proj_b);
        f(format!("{prefix}.proj_c"), &mut self.proj_c);
        f(format!("{prefix}.proj_delta"), &mut self.proj_delta);
        f(format!("{prefix}.delta_bias"), &mut self.delta_bias);
    }
}

/// Local branch: GELU(DWConv3x3(LayerNorm(F))).
pub struct CnnBranch<S: Scalar> {
    pub ln: LayerNorm2d<S>,
    pub dw: Conv2d<S>,
}

impl<S: Scalar> CnnBranch<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> Result<Self> {
        Ok(CnnBranch {
            ln: LayerNorm2d::new(c)?,
            dw: Conv2d::new(rng, c, c, 3, c, 1, Padding::Same, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.dw.forward(&self.ln.forward(x)?)?.gelu())
    }
}

impl<S: Scalar> Module<S> for CnnBranch<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.ln.visit_params(&format!("{prefix}.ln"), f);
        self.dw.visit_params(&format!("{prefix}.dw"), f);
    }
}

/// Global branch: LayerNorm, row-major flatten to a length H·W sequence,
/// selective scan, LayerNorm, reshape back.
pub struct MambaBranch<S: Scalar> {
    pub ln_in: LayerNorm2d<S>,
    pub ssm: SsmParams<S>,
    pub ln_out: LayerNorm2d<S>,
}

impl<S: Scalar> MambaBranch<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize, state: usize) -> Result<Self> {
        Ok(MambaBranch {
            ln_in: LayerNorm2d::new(c)?,
            ssm: SsmParams::new(rng, c, state)?,
            ln_out: LayerNorm2d::new(c)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("mamba branch expects [B,C,H,W], got {:?}", s)));
        }
        let (h, w) = (s[2], s[3]);
        let u = self.ln_in.forward(x)?.chw_to_lc()?;
        let y = self.ssm.scan(&u)?;
        self.ln_out.forward(&y.lc_to_chw(h, w)?)
    }
}

impl<S: Scalar> Module<S> for MambaBranch<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.ln_in.visit_params(&format!("{prefix}.ln_in"), f);
        self.ssm.visit_params(&format!("{prefix}.ssm"), f);
        self.ln_out.visit_params(&format!("{prefix}.ln_out"), f);
    }
}

/// Gate head: degradation features projected to C channels, broadcast,
/// concatenated with F, mixed by a 1x1 convolution, squashed by sigmoid.
pub struct GateParams<S: Scalar> {
    pub proj_pf: Tensor<S>,
    pub proj_pf_bias: Tensor<S>,
    pub gate_conv: Conv2d<S>,
}

impl<S: Scalar> GateParams<S> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize, f_p: usize) -> Result<Self> {
        // The mixing conv starts at zero so the gate opens at exactly
        // sigmoid(0) = 0.5 and learns its deviation from an even blend.
        let mut gate_conv = Conv2d::pointwise(rng, 2 * c, c)?;
        gate_conv.zero()?;
        Ok(GateParams {
            proj_pf: param_fan_in(rng, &[f_p, c], f_p)?,
            proj_pf_bias: param_zeros(&[c])?,
            gate_conv,
        })
    }

    /// G[B,C,H,W], entries in (0,1).
    pub fn forward(&self, x: &Tensor<S>, p_f: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("gate expects [B,C,H,W], got {:?}", s)));
        }
        let pf_map = p_f
            .linear(&self.proj_pf, Some(&self.proj_pf_bias))?
            .broadcast_spatial(s[2], s[3])?;
        Ok(self.gate_conv.forward(&x.concat_channels(&pf_map)?)?.sigmoid())
    }
}

impl<S: Scalar> Module<S> for GateParams<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.proj_pf"), &mut self.proj_pf);
        f(format!("{prefix}.proj_pf_bias"), &mut self.proj_pf_bias);
        self.gate_conv.visit_params(&format!("{prefix}.gate_conv"), f);
    }
}

/// Convex fusion of the two branch outputs: G ⊙ F_cnn + (1-G) ⊙ F_mamba.
pub fn fuse<S: Scalar>(
    f_cnn: &Tensor<S>,
    f_mamba: &Tensor<S>,
    g: &Tensor<S>,
) -> Result<Tensor<S>> {
    let ones = Tensor::full(g.shape(), S::one());
    g.mul(f_cnn)?.add(&ones.sub(g)?.mul(f_mamba)?)
}

/// Branch fusion policy: the dynamic gate, or a fixed 0.5/0.5 average for
/// the gate-ablated configuration.
pub enum Fusion<S: Scalar> {
    Dynamic(GateParams<S>),
    Static,
}

/// The full dual-branch block.
pub struct Mcdb<S: Scalar> {
    pub cnn: CnnBranch<S>,
    pub mamba: MambaBranch<S>,
    pub fusion: Fusion<S>,
}

impl<S: Scalar> Mcdb<S> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c: usize,
        state: usize,
        f_p: usize,
        dynamic_gate: bool,
    ) -> Result<Self> {
        Ok(Mcdb {
            cnn: CnnBranch::new(rng, c)?,
            mamba: MambaBranch::new(rng, c, state)?,
            fusion: if dynamic_gate {
                Fusion::Dynamic(GateParams::new(rng, c, f_p)?)
            } else {
                Fusion::Static
            },
        })
    }

    /// Returns the fused features and the gate actually used.
    pub fn forward(&self, x: &Tensor<S>, p_f: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let f_cnn = self.cnn.forward(x)?;
        let f_mamba = self.mamba.forward(x)?;
        let g = match &self.fusion {
            Fusion::Dynamic(gate) => gate.forward(x, p_f)?,
            Fusion::Static => Tensor::full(x.shape(), S::of(0.5)),
        };
        Ok((fuse(&f_cnn, &f_mamba, &g)?, g))
    }
}

impl<S: Scalar> Module<S> for Mcdb<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.cnn.visit_params(&format!("{prefix}.cnn"), f);
        self.mamba.visit_params(&format!("{prefix}.mamba"), f);
        if let Fusion::Dynamic(gate) = &mut self.fusion {
            gate.visit_params(&format!("{prefix}.gate"), f);
        }
    }
}
