//! 2-D cross-correlation (grouped, strided) and nearest-neighbor upsampling.

use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Border handling for `conv2d`. `Same` zero-pads so that stride-1 output
/// preserves H and W (odd kernels only); `Valid` uses no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

struct ConvDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cg: usize, // input channels per group
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    groups: usize,
}

fn conv_dims<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    groups: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvDims> {
    let sx = x.shape();
    let sk = kernel.shape();
    if sx.len() != 4 || sk.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d: input {:?}, kernel {:?}",
            sx, sk
        )));
    }
    let (b, cin, h, w) = (sx[0], sx[1], sx[2], sx[3]);
    let (cout, cg, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::Config(format!(
            "conv2d: groups={} does not divide C_in={} / C_out={}",
            groups, cin, cout
        )));
    }
    if cg != cin / groups {
        return Err(Error::Shape(format!(
            "conv2d: kernel expects {} channels per group, input provides {}",
            cg,
            cin / groups
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d: stride must be >= 1".into()));
    }
    let (ph, pw) = match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::Contract(format!(
                    "conv2d: same padding requires odd kernel, got {}x{}",
                    kh, kw
                )));
            }
            ((kh - 1) / 2, (kw - 1) / 2)
        }
        Padding::Valid => (0, 0),
    };
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(Error::Shape(format!(
            "conv2d: kernel {}x{} larger than padded input {}x{}",
            kh,
            kw,
            h + 2 * ph,
            w + 2 * pw
        )));
    }
    let oh = (h + 2 * ph - kh) / stride + 1;
    let ow = (w + 2 * pw - kw) / stride + 1;
    Ok(ConvDims {
        b,
        cin,
        h,
        w,
        cout,
        cg,
        kh,
        kw,
        ph,
        pw,
        stride,
        oh,
        ow,
        groups,
    })
}

fn conv_forward<S: Scalar>(x: &[S], k: &[S], d: &ConvDims) -> Vec<S> {
    use rayon::prelude::*;
    let mut out = vec![S::zero(); d.b * d.cout * d.oh * d.ow];
    let plane = d.cout * d.oh * d.ow;
    out.par_chunks_mut(plane).enumerate().for_each(|(bi, chunk)| {
        conv_forward_one(x, k, d, bi, chunk);
    });
    out
}

/// Valid output range [lo, hi) along one axis for a given kernel offset:
/// the o with 0 <= o*stride + kpos - pad < extent.
fn valid_range(kpos: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kpos).div_ceil(stride);
    let hi = if extent + pad > kpos { ((extent + pad - kpos - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Forward pass for one batch element; `out` is its [C_out, OH, OW] slice.
fn conv_forward_one<S: Scalar>(x: &[S], k: &[S], d: &ConvDims, bi: usize, out: &mut [S]) {
    let cout_g = d.cout / d.groups;
    for co in 0..d.cout {
        let g = co / cout_g;
        let obase = co * d.oh * d.ow;
        for cg in 0..d.cg {
            let ci = g * d.cg + cg;
            let xbase = (bi * d.cin + ci) * d.h * d.w;
            for ki in 0..d.kh {
                let (oi_lo, oi_hi) = valid_range(ki, d.ph, d.stride, d.h, d.oh);
                for kj in 0..d.kw {
                    let kv = k[((co * d.cg + cg) * d.kh + ki) * d.kw + kj];
                    if kv == S::zero() {
                        continue;
                    }
                    let (oj_lo, oj_hi) = valid_range(kj, d.pw, d.stride, d.w, d.ow);
                    if oj_lo >= oj_hi {
                        continue;
                    }
                    for oi in oi_lo..oi_hi {
                        let ih = oi * d.stride + ki - d.ph;
                        let xrow = xbase + ih * d.w;
                        let orow = obase + oi * d.ow;
                        if d.stride == 1 {
                            let xoff = xrow + oj_lo + kj - d.pw;
                            let n = oj_hi - oj_lo;
                            for (o, &xv) in out[orow + oj_lo..orow + oj_hi]
                                .iter_mut()
                                .zip(&x[xoff..xoff + n])
                            {
                                *o = *o + kv * xv;
                            }
                        } else {
                            for oj in oj_lo..oj_hi {
                                let iw = oj * d.stride + kj - d.pw;
                                out[orow + oj] = out[orow + oj] + kv * x[xrow + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward<S: Scalar>(
    g: &[S],
    x: &[S],
    k: &[S],
    d: &ConvDims,
    dx: &mut [S],
    dk: &mut [S],
    need_dx: bool,
    need_dk: bool,
) {
    use rayon::prelude::*;
    let xplane = d.cin * d.h * d.w;
    // Each batch element owns a disjoint dx slice; kernel-gradient partials
    // are accumulated per thread and reduced afterwards.
    let partials: Vec<Vec<S>> = dx
        .par_chunks_mut(xplane)
        .enumerate()
        .map(|(bi, dxb)| {
            let mut dkb = vec![S::zero(); if need_dk { dk.len() } else { 0 }];
            conv_backward_one(g, x, k, d, bi, dxb, &mut dkb, need_dx, need_dk);
            dkb
        })
        .collect();
    for dkb in partials {
        for (acc, v) in dk.iter_mut().zip(dkb) {
            *acc = *acc + v;
        }
    }
}

/// Backward pass for one batch element; `dx` is its [C_in, H, W] slice.
#[allow(clippy::too_many_arguments)]
fn conv_backward_one<S: Scalar>(
    g: &[S],
    x: &[S],
    k: &[S],
    d: &ConvDims,
    bi: usize,
    dx: &mut [S],
    dk: &mut [S],
    need_dx: bool,
    need_dk: bool,
) {
    let cout_g = d.cout / d.groups;
    {
        for co in 0..d.cout {
            let grp = co / cout_g;
            let obase = (bi * d.cout + co) * d.oh * d.ow;
            for cg in 0..d.cg {
                let ci = grp * d.cg + cg;
                let xbase = (bi * d.cin + ci) * d.h * d.w;
                let dxbase = ci * d.h * d.w;
                for ki in 0..d.kh {
                    let (oi_lo, oi_hi) = valid_range(ki, d.ph, d.stride, d.h, d.oh);
                    for kj in 0..d.kw {
                        let kidx = ((co * d.cg + cg) * d.kh + ki) * d.kw + kj;
                        let kv = k[kidx];
                        let mut kacc = S::zero();
                        let (oj_lo, oj_hi) = valid_range(kj, d.pw, d.stride, d.w, d.ow);
                        if oj_lo >= oj_hi {
                            continue;
                        }
                        for oi in oi_lo..oi_hi {
                            let ih = oi * d.stride + ki - d.ph;
                            let xrow = xbase + ih * d.w;
                            let dxrow = dxbase + ih * d.w;
                            let orow = obase + oi * d.ow;
                            if d.stride == 1 {
                                let off = oj_lo + kj - d.pw;
                                let n = oj_hi - oj_lo;
                                let grow = &g[orow + oj_lo..orow + oj_hi];
                                let xs = &x[xrow + off..xrow + off + n];
                                let dxs = &mut dx[dxrow + off..dxrow + off + n];
                                // Two passes so both the reduction and the
                                // elementwise update vectorize.
                                if need_dk {
                                    for (&gv, &xv) in grow.iter().zip(xs) {
                                        kacc = kacc + gv * xv;
                                    }
                                }
                                if need_dx {
                                    for (dv, &gv) in dxs.iter_mut().zip(grow) {
                                        *dv = *dv + gv * kv;
                                    }
                                }
                            } else {
                                for oj in oj_lo..oj_hi {
                                    let iw = oj * d.stride + kj - d.pw;
                                    let gv = g[orow + oj];
                                    if need_dk {
                                        kacc = kacc + gv * x[xrow + iw];
                                    }
                                    if need_dx {
                                        dx[dxrow + iw] = dx[dxrow + iw] + gv * kv;
                                    }
                                }
                            }
                        }
                        if need_dk {
                            dk[kidx] = dk[kidx] + kacc;
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Grouped strided 2-D cross-correlation of x[B,C,H,W] with
    /// kernel[C_out, C_in/groups, kh, kw], optional per-output-channel bias.
    pub fn conv2d(
        &self,
        kernel: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        groups: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor<S>> {
        let d = conv_dims(self, kernel, groups, stride, padding)?;
        if let Some(b) = bias {
            if b.shape() != [d.cout] {
                return Err(Error::Shape(format!(
                    "conv2d: bias {:?} vs C_out={}",
                    b.shape(),
                    d.cout
                )));
            }
        }
        let mut out = conv_forward(self.data(), kernel.data(), &d);
        if let Some(b) = bias {
            let hw = d.oh * d.ow;
            for bi in 0..d.b {
                for co in 0..d.cout {
                    let bv = b.data()[co];
                    for o in &mut out[(bi * d.cout + co) * hw..(bi * d.cout + co + 1) * hw] {
                        *o = *o + bv;
                    }
                }
            }
        }
        check_finite(&out, "conv2d")?;
        let x = self.data().to_vec();
        let k = kernel.data().to_vec();
        let need_dx = self.requires_grad();
        let need_dk = kernel.requires_grad();
        let shape = vec![d.b, d.cout, d.oh, d.ow];
        let mut parents = vec![self.clone(), kernel.clone()];
        let has_bias = bias.is_some();
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            shape,
            out,
            parents,
            Box::new(move |g, bufs| {
                let (dx, rest) = bufs.split_at_mut(1);
                let (dk, db) = rest.split_at_mut(1);
                conv_backward(g, &x, &k, &d, &mut dx[0], &mut dk[0], need_dx, need_dk);
                if has_bias {
                    let hw = d.oh * d.ow;
                    for bi in 0..d.b {
                        for co in 0..d.cout {
                            let mut s = S::zero();
                            for &gv in &g[(bi * d.cout + co) * hw..(bi * d.cout + co + 1) * hw] {
                                s = s + gv;
                            }
                            db[0][co] = db[0][co] + s;
                        }
                    }
                }
            }),
        ))
    }

    /// Nearest-neighbor 2x spatial upsampling of [B,C,H,W].
    pub fn nearest_upsample2(&self) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("nearest_upsample2 on shape {:?}", s)));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); b * c * oh * ow];
        let src = self.data();
        for i in 0..b * c {
            let sbase = i * h * w;
            let obase = i * oh * ow;
            for y in 0..oh {
                let sy = y / 2;
                for x in 0..ow {
                    out[obase + y * ow + x] = src[sbase + sy * w + x / 2];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..b * c {
                    let sbase = i * h * w;
                    let obase = i * oh * ow;
                    for y in 0..oh {
                        let sy = y / 2;
                        for x in 0..ow {
                            let p = sbase + sy * w + x / 2;
                            bufs[0][p] = bufs[0][p] + g[obase + y * ow + x];
                        }
                    }
                }
            }),
        ))
    }
}
