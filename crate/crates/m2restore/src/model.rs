//! Full restoration network: prompt-conditioned encoder with per-level
//! expert routers, a dual-branch bottleneck, and a decoder with skip
//! connections, all behind a global input residual.

use rand_chacha::ChaCha8Rng;

use crate::dder::{Dder, Mode, RoutingState};
use crate::error::{Error, Result};
use crate::mcdb::Mcdb;
use crate::nn::{
    BlockParams, Conv2d, Downsample, Module, PatchEmbed, TransformerBlock, Upsample,
};
use crate::prompt::{task_prompt, DegradationPrior, PromptGen, PromptLibrary};
use crate::tensor::{Scalar, Tensor};

/// Ablation topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Everything on.
    Full,
    /// Branch fusion frozen at 0.5/0.5.
    NoDgf,
    /// Encoder routers replaced by plain transformer blocks.
    NoDder,
    /// Dual-branch bottleneck removed; the bottleneck's transformer blocks
    /// stand in for it.
    DderOnly,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "no_dgf" => Ok(Variant::NoDgf),
            "no_dder" => Ok(Variant::NoDder),
            "dder_only" => Ok(Variant::DderOnly),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDgf => "no_dgf",
            Variant::NoDder => "no_dder",
            Variant::DderOnly => "dder_only",
        }
    }

    fn has_routers(self) -> bool {
        !matches!(self, Variant::NoDder)
    }

    fn has_mcdb(self) -> bool {
        !matches!(self, Variant::DderOnly)
    }

    fn dynamic_gate(self) -> bool {
        matches!(self, Variant::Full | Variant::NoDder)
    }
}

/// Architecture hyperparameters. `channels` must double level to level so
/// the down/upsampling pairs line up.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub blocks: Vec<usize>,
    pub heads: usize,
    pub expansion: f64,
    pub n_experts: usize,
    pub top_k: usize,
    pub c_p: usize,
    pub m: usize,
    pub d_classes: usize,
    pub f_p: usize,
    pub ssm_state: usize,
    pub lambda: f64,
    pub eps_stab: f64,
    pub variant: Variant,
    /// Hook for an auxiliary frequency-refinement stage in the decoder;
    /// currently an identity pass-through.
    pub aflb_enabled: bool,
}

impl ModelConfig {
    /// Desk-scale default configuration.
    pub fn desk() -> Self {
        ModelConfig {
            levels: 3,
            channels: vec![16, 32, 64],
            blocks: vec![1, 2, 2],
            heads: 4,
            expansion: 2.0,
            n_experts: 4,
            top_k: 2,
            c_p: 8,
            m: 16,
            d_classes: crate::data::NUM_CLASSES,
            f_p: 64,
            ssm_state: 8,
            lambda: 0.01,
            eps_stab: 1e-10,
            variant: Variant::Full,
            aflb_enabled: false,
        }
    }

    /// Small configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            levels: 2,
            channels: vec![4, 8],
            blocks: vec![1, 1],
            heads: 2,
            expansion: 1.5,
            n_experts: 2,
            top_k: 1,
            c_p: 2,
            m: 4,
            d_classes: crate::data::NUM_CLASSES,
            f_p: 8,
            ssm_state: 2,
            lambda: 0.01,
            eps_stab: 1e-10,
            variant: Variant::Full,
            aflb_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0
            || self.channels.len() != self.levels
            || self.blocks.len() != self.levels
        {
            return Err(Error::Config(format!(
                "levels {} vs {} channel and {} block entries",
                self.levels,
                self.channels.len(),
                self.blocks.len()
            )));
        }
        for i in 0..self.levels - 1 {
            if self.channels[i + 1] != 2 * self.channels[i] {
                return Err(Error::Config(format!(
                    "channels must double per level, got {:?}",
                    self.channels
                )));
            }
        }
        for &c in &self.channels {
            if c % self.heads != 0 {
                return Err(Error::Config(format!(
                    "heads {} must divide every channel width {:?}",
                    self.heads, self.channels
                )));
            }
        }
        if self.top_k == 0 || self.top_k > self.n_experts {
            return Err(Error::Config(format!(
                "top-K {} out of range for {} experts",
                self.top_k, self.n_experts
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} < 0", self.lambda)));
        }
        Ok(())
    }

    /// Spatial divisibility required by the down/upsampling ladder.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    embed: PatchEmbed<S>,
    prompt_gen: PromptGen<S>,
    library: PromptLibrary<S>,
    enc_blocks: Vec<Vec<TransformerBlock<S>>>,
    routers: Vec<Dder<S>>,
    router_subs: Vec<TransformerBlock<S>>,
    downs: Vec<Downsample<S>>,
    mcdb: Option<Mcdb<S>>,
    ups: Vec<Upsample<S>>,
    dec_blocks: Vec<Vec<TransformerBlock<S>>>,
    head: Conv2d<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(rng: &mut ChaCha8Rng, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let levels = config.levels;
        let mut enc_blocks = Vec::new();
        let mut dec_blocks = Vec::new();
        let mut routers = Vec::new();
        let mut router_subs = Vec::new();
        let mut downs = Vec::new();
        let mut ups = Vec::new();

        for i in 0..levels {
            let p = BlockParams::new(config.channels[i], config.expansion, config.heads)?;
            let blocks = (0..config.blocks[i])
                .map(|_| TransformerBlock::new(rng, p))
                .collect::<Result<Vec<_>>>()?;
            enc_blocks.push(blocks);
            if i < levels - 1 {
                if config.variant.has_routers() {
                    let mut dder = Dder::new(
                        rng,
                        config.channels[i],
                        config.m,
                        config.d_classes,
                        config.n_experts,
                        config.top_k,
                    )?;
                    // Experts start as exact identities (zeroed second conv)
                    // so routing begins from a clean slate and each expert
                    // learns a residual shaped by the pixels it receives.
                    for expert in &mut dder.bank.experts {
                        expert.conv2.zero()?;
                    }
                    routers.push(dder);
                } else {
                    router_subs.push(TransformerBlock::new(rng, p)?);
                }
                downs.push(Downsample::new(rng, config.channels[i])?);
            }
        }
        for i in (0..levels - 1).rev() {
            ups.push(Upsample::new(rng, config.channels[i + 1])?);
            let p = BlockParams::new(config.channels[i], config.expansion, config.heads)?;
            let blocks = (0..config.blocks[i].max(1))
                .map(|_| TransformerBlock::new(rng, p))
                .collect::<Result<Vec<_>>>()?;
            dec_blocks.push(blocks);
        }

        let mcdb = if config.variant.has_mcdb() {
            Some(Mcdb::new(
                rng,
                config.channels[levels - 1],
                config.ssm_state,
                config.f_p,
                config.variant.dynamic_gate(),
            )?)
        } else {
            None
        };

        let mut head = Conv2d::new(
            rng,
            config.channels[0],
            3,
            3,
            1,
            1,
            crate::tensor::Padding::Same,
            true,
        )?;
        head.zero()?; // identity start: restored == input before training

        Ok(Model {
            embed: PatchEmbed::new(rng, config.channels[0])?,
            prompt_gen: PromptGen::new(rng, config.c_p)?,
            library: PromptLibrary::new(rng, config.c_p, config.m)?,
            enc_blocks,
            routers,
            router_subs,
            downs,
            mcdb,
            ups,
            dec_blocks,
            head,
            config,
        })
    }

    /// Decoder-side auxiliary refinement slot; identity until a refinement
    /// stage is plugged in.
    fn aflb(&self, x: Tensor<S>) -> Tensor<S> {
        x
    }

    pub fn forward(
        &self,
        img: &Tensor<S>,
        priors: &[DegradationPrior<S>],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<S>, Vec<RoutingState<S>>)> {
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("model expects [B,3,H,W], got {:?}", s)));
        }
        let multiple = self.config.size_multiple();
        if !s[2].is_multiple_of(multiple) || !s[3].is_multiple_of(multiple) {
            return Err(Error::Contract(format!(
                "spatial extents {}x{} must be divisible by {multiple}",
                s[2], s[3]
            )));
        }
        if priors.len() != s[0] {
            return Err(Error::Contract(format!(
                "{} priors for batch of {}",
                priors.len(),
                s[0]
            )));
        }

        let q = self.prompt_gen.prompt_weights(img)?;
        let t_task = task_prompt(&q, &self.library)?;
        let (d_g, p_f) = DegradationPrior::stack(priors)?;

        let mut diagnostics = Vec::new();
        let mut skips = Vec::new();
        let mut f = self.embed.forward(img)?;
        let levels = self.config.levels;
        for i in 0..levels - 1 {
            for blk in &self.enc_blocks[i] {
                f = blk.forward(&f)?;
            }
            if self.config.variant.has_routers() {
                let (y, state) = self.routers[i].forward(&f, &t_task, &d_g, mode, rng)?;
                f = y;
                diagnostics.push(state);
            } else {
                f = self.router_subs[i].forward(&f)?;
            }
            skips.push(f.clone());
            f = self.downs[i].forward(&f)?;
        }
        for blk in &self.enc_blocks[levels - 1] {
            f = blk.forward(&f)?;
        }
        if let Some(mcdb) = &self.mcdb {
            let (fused, _gate) = mcdb.forward(&f, &p_f)?;
            f = fused;
        }
        for (di, i) in (0..levels - 1).rev().enumerate() {
            f = self.ups[di].forward(&f)?;
            f = f.add(&skips[i])?;
            f = self.aflb(f);
            for blk in &self.dec_blocks[di] {
                f = blk.forward(&f)?;
            }
        }
        let restored = img.add(&self.head.forward(&f)?)?;
        Ok((restored, diagnostics))
    }
}

impl<S: Scalar> Module<S> for Model<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.embed.visit_params(&format!("{prefix}.embed"), f);
        self.prompt_gen.visit_params(&format!("{prefix}.prompt_gen"), f);
        self.library.visit_params(&format!("{prefix}.library"), f);
        for (i, blocks) in self.enc_blocks.iter_mut().enumerate() {
            for (j, blk) in blocks.iter_mut().enumerate() {
                blk.visit_params(&format!("{prefix}.enc{i}.blk{j}"), f);
            }
        }
        for (i, r) in self.routers.iter_mut().enumerate() {
            r.visit_params(&format!("{prefix}.dder{i}"), f);
        }
        for (i, r) in self.router_subs.iter_mut().enumerate() {
            r.visit_params(&format!("{prefix}.routersub{i}"), f);
        }
        for (i, d) in self.downs.iter_mut().enumerate() {
            d.visit_params(&format!("{prefix}.down{i}"), f);
        }
        if let Some(mcdb) = &mut self.mcdb {
            mcdb.visit_params(&format!("{prefix}.mcdb"), f);
        }
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit_params(&format!("{prefix}.up{i}"), f);
        }
        for (i, blocks) in self.dec_blocks.iter_mut().enumerate() {
            for (j, blk) in blocks.iter_mut().enumerate() {
                blk.visit_params(&format!("{prefix}.dec{i}.blk{j}"), f);
            }
        }
        self.head.visit_params(&format!("{prefix}.head"), f);
    }
}
