//! Reductions, normalizations, softmax, layout permutes and loss primitives.

use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

impl<S: Scalar> Tensor<S> {
    /// Shift-invariant softmax over the last axis. `-inf` entries act as
    /// masked-out positions; a fully masked row is an error.
    pub fn softmax_lastdim(&self) -> Result<Tensor<S>> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("softmax on rank-0 tensor".into()))?;
        let rows = self.numel() / n;
        let x = self.data();
        let mut out = vec![S::zero(); self.numel()];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mut mx = S::neg_infinity();
            for &v in row {
                if v.is_nan() {
                    return Err(Error::Numeric("softmax: NaN input".into()));
                }
                if v > mx {
                    mx = v;
                }
            }
            if mx == S::neg_infinity() {
                return Err(Error::Numeric(
                    "softmax: degenerate axis (all entries -inf)".into(),
                ));
            }
            let orow = &mut out[r * n..(r + 1) * n];
            let mut sum = S::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - mx).exp();
                sum = sum + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / sum;
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mut dot = S::zero();
                    for (&yv, &gv) in yr.iter().zip(gr) {
                        dot = dot + yv * gv;
                    }
                    let br = &mut bufs[0][r * n..(r + 1) * n];
                    for i in 0..n {
                        br[i] = yr[i] * (gr[i] - dot);
                    }
                }
            }),
        ))
    }

    pub fn sum_all(&self) -> Tensor<S> {
        let s = self.data().iter().fold(S::zero(), |a, &v| a + v);
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(|g, bufs| {
                let gv = g[0];
                for b in bufs[0].iter_mut() {
                    *b = gv;
                }
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<S> {
        let n = S::of(self.numel() as f64);
        let s = self.data().iter().fold(S::zero(), |a, &v| a + v) / n;
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, bufs| {
                let gv = g[0] / n;
                for b in bufs[0].iter_mut() {
                    *b = gv;
                }
            }),
        )
    }

    /// Column sums of a 2-D tensor: [m,n] → [n].
    pub fn sum_axis0(&self) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("sum_axis0 on shape {:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let mut out = vec![S::zero(); n];
        for r in 0..m {
            for (o, &v) in out.iter_mut().zip(&self.data()[r * n..(r + 1) * n]) {
                *o = *o + v;
            }
        }
        Ok(Tensor::from_op(
            vec![n],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for r in 0..m {
                    bufs[0][r * n..(r + 1) * n].copy_from_slice(g);
                }
            }),
        ))
    }

    /// Per-position channel normalization of [B,C,H,W]: zero mean / unit
    /// variance across C at every (b,h,w), then affine by gamma/beta[C].
    pub fn layer_norm_channels(
        &self,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        eps: S,
    ) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("layer_norm_channels on shape {:?}", s)));
        }
        let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::Shape(format!(
                "layer_norm_channels: C={} vs gamma {:?} beta {:?}",
                c,
                gamma.shape(),
                beta.shape()
            )));
        }
        if eps <= S::zero() {
            return Err(Error::Contract("layer_norm: eps must be > 0".into()));
        }
        let hw = h * w;
        layer_norm_grouped(self, gamma, beta, eps, bsz * hw, c, move |grp, i| {
            let (b, pos) = (grp / hw, grp % hw);
            b * c * hw + i * hw + pos
        })
    }

    /// Normalization across the last axis of any tensor, affine by
    /// gamma/beta of that axis length.
    pub fn layer_norm_lastdim(
        &self,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        eps: S,
    ) -> Result<Tensor<S>> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("layer_norm on rank-0 tensor".into()))?;
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(Error::Shape(format!(
                "layer_norm_lastdim: n={} vs gamma {:?} beta {:?}",
                n,
                gamma.shape(),
                beta.shape()
            )));
        }
        if eps <= S::zero() {
            return Err(Error::Contract("layer_norm: eps must be > 0".into()));
        }
        let rows = self.numel() / n;
        layer_norm_grouped(self, gamma, beta, eps, rows, n, move |grp, i| grp * n + i)
    }

    /// Spatial mean per channel: [B,C,H,W] → [B,C].
    pub fn global_avg_pool(&self) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("global_avg_pool on shape {:?}", s)));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h == 0 || w == 0 {
            return Err(Error::Contract("global_avg_pool: empty spatial extents".into()));
        }
        let hw = h * w;
        let inv = S::of(1.0 / hw as f64);
        let mut out = vec![S::zero(); b * c];
        for i in 0..b * c {
            let mut sum = S::zero();
            for &v in &self.data()[i * hw..(i + 1) * hw] {
                sum = sum + v;
            }
            out[i] = sum * inv;
        }
        Ok(Tensor::from_op(
            vec![b, c],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..b * c {
                    let gv = g[i] * inv;
                    for o in &mut bufs[0][i * hw..(i + 1) * hw] {
                        *o = gv;
                    }
                }
            }),
        ))
    }

    /// Concatenate two [B,C,H,W] maps along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 4
            || sb.len() != 4
            || sa[0] != sb[0]
            || sa[2] != sb[2]
            || sa[3] != sb[3]
        {
            return Err(Error::Shape(format!(
                "concat_channels: {:?} vs {:?}",
                sa, sb
            )));
        }
        let (b, c1, c2, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut out = vec![S::zero(); b * (c1 + c2) * hw];
        for bi in 0..b {
            let dst = &mut out[bi * (c1 + c2) * hw..];
            dst[..c1 * hw].copy_from_slice(&self.data()[bi * c1 * hw..(bi + 1) * c1 * hw]);
            dst[c1 * hw..(c1 + c2) * hw]
                .copy_from_slice(&other.data()[bi * c2 * hw..(bi + 1) * c2 * hw]);
        }
        Ok(Tensor::from_op(
            vec![b, c1 + c2, sa[2], sa[3]],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                for bi in 0..b {
                    let src = &g[bi * (c1 + c2) * hw..];
                    bufs[0][bi * c1 * hw..(bi + 1) * c1 * hw]
                        .copy_from_slice(&src[..c1 * hw]);
                    bufs[1][bi * c2 * hw..(bi + 1) * c2 * hw]
                        .copy_from_slice(&src[c1 * hw..(c1 + c2) * hw]);
                }
            }),
        ))
    }

    /// Broadcast a per-image vector [B,C] to the spatial grid: [B,C,H,W].
    pub fn broadcast_spatial(&self, h: usize, w: usize) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("broadcast_spatial on shape {:?}", s)));
        }
        let (b, c) = (s[0], s[1]);
        let hw = h * w;
        let mut out = vec![S::zero(); b * c * hw];
        for i in 0..b * c {
            let v = self.data()[i];
            for o in &mut out[i * hw..(i + 1) * hw] {
                *o = v;
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..b * c {
                    let mut sum = S::zero();
                    for &gv in &g[i * hw..(i + 1) * hw] {
                        sum = sum + gv;
                    }
                    bufs[0][i] = sum;
                }
            }),
        ))
    }

    /// x[B,C,H,W] ⊙ g[B,1,H,W], gate broadcast across channels.
    pub fn mul_spatial(&self, gate: &Tensor<S>) -> Result<Tensor<S>> {
        let (sx, sg) = (self.shape(), gate.shape());
        if sx.len() != 4
            || sg.len() != 4
            || sg[1] != 1
            || sx[0] != sg[0]
            || sx[2] != sg[2]
            || sx[3] != sg[3]
        {
            return Err(Error::Shape(format!("mul_spatial: {:?} vs {:?}", sx, sg)));
        }
        let (b, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        let x = self.data().to_vec();
        let gt = gate.data().to_vec();
        let mut out = vec![S::zero(); x.len()];
        for bi in 0..b {
            let grow = &gt[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for p in 0..hw {
                    out[base + p] = x[base + p] * grow[p];
                }
            }
        }
        check_finite(&out, "mul_spatial")?;
        Ok(Tensor::from_op(
            sx.to_vec(),
            out,
            vec![self.clone(), gate.clone()],
            Box::new(move |g, bufs| {
                for bi in 0..b {
                    let grow = &gt[bi * hw..(bi + 1) * hw];
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        for p in 0..hw {
                            bufs[0][base + p] = g[base + p] * grow[p];
                            bufs[1][bi * hw + p] =
                                bufs[1][bi * hw + p] + g[base + p] * x[base + p];
                        }
                    }
                }
            }),
        ))
    }

    /// Row-major spatial flattening with per-position channel vectors:
    /// [B,C,H,W] → [B,H·W,C].
    pub fn chw_to_lc(&self) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("chw_to_lc on shape {:?}", s)));
        }
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let mut out = vec![S::zero(); self.numel()];
        let src = self.data();
        for bi in 0..b {
            for ci in 0..c {
                let sbase = (bi * c + ci) * hw;
                for p in 0..hw {
                    out[(bi * hw + p) * c + ci] = src[sbase + p];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, hw, c],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for bi in 0..b {
                    for ci in 0..c {
                        let sbase = (bi * c + ci) * hw;
                        for p in 0..hw {
                            bufs[0][sbase + p] = g[(bi * hw + p) * c + ci];
                        }
                    }
                }
            }),
        ))
    }

    /// Inverse of [`chw_to_lc`]: [B,L,C] → [B,C,H,W] with L = H·W.
    pub fn lc_to_chw(&self, h: usize, w: usize) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 3 || s[1] != h * w {
            return Err(Error::Shape(format!(
                "lc_to_chw: shape {:?} vs {}x{}",
                s, h, w
            )));
        }
        let (b, hw, c) = (s[0], s[1], s[2]);
        let mut out = vec![S::zero(); self.numel()];
        let src = self.data();
        for bi in 0..b {
            for p in 0..hw {
                for ci in 0..c {
                    out[(bi * c + ci) * hw + p] = src[(bi * hw + p) * c + ci];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for bi in 0..b {
                    for p in 0..hw {
                        for ci in 0..c {
                            bufs[0][(bi * hw + p) * c + ci] = g[(bi * c + ci) * hw + p];
                        }
                    }
                }
            }),
        ))
    }

    /// Per-row Top-K selection followed by softmax over the kept entries;
    /// non-selected entries are exactly zero and receive no gradient. Ties
    /// are broken toward the lower index.
    pub fn topk_softmax(&self, k: usize) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("topk_softmax on shape {:?}", s)));
        }
        let (rows, n) = (s[0], s[1]);
        if k == 0 || k > n {
            return Err(Error::Config(format!("topk_softmax: K={} out of 1..={}", k, n)));
        }
        let x = self.data();
        let mut out = vec![S::zero(); rows * n];
        let mut kept: Vec<u32> = Vec::with_capacity(rows * k);
        let mut idx: Vec<usize> = (0..n).collect();
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            idx.sort_by(|&a, &b| {
                row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b))
            });
            let sel = &idx[..k];
            let mx = sel.iter().map(|&i| row[i]).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            let orow = &mut out[r * n..(r + 1) * n];
            for &i in sel {
                orow[i] = (row[i] - mx).exp();
                sum = sum + orow[i];
            }
            for &i in sel {
                orow[i] = orow[i] / sum;
                kept.push(i as u32);
            }
            idx.sort_unstable();
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            vec![rows, n],
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for r in 0..rows {
                    let sel = &kept[r * k..(r + 1) * k];
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mut dot = S::zero();
                    for &i in sel {
                        let i = i as usize;
                        dot = dot + yr[i] * gr[i];
                    }
                    let br = &mut bufs[0][r * n..(r + 1) * n];
                    for &i in sel {
                        let i = i as usize;
                        br[i] = yr[i] * (gr[i] - dot);
                    }
                }
            }),
        ))
    }

    /// Mean absolute error between two same-shape tensors (scalar output).
    pub fn l1_loss(&self, target: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "l1_loss: {:?} vs {:?}",
                self.shape(),
                target.shape()
            )));
        }
        let n = S::of(self.numel() as f64);
        let a = self.data().to_vec();
        let b = target.data().to_vec();
        let mut sum = S::zero();
        for (&av, &bv) in a.iter().zip(&b) {
            sum = sum + (av - bv).abs();
        }
        let loss = sum / n;
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone(), target.clone()],
            Box::new(move |g, bufs| {
                let gv = g[0] / n;
                for i in 0..a.len() {
                    let d = a[i] - b[i];
                    let s = if d > S::zero() {
                        gv
                    } else if d < S::zero() {
                        -gv
                    } else {
                        S::zero()
                    };
                    bufs[0][i] = s;
                    bufs[1][i] = -s;
                }
            }),
        ))
    }

    /// Mean negative log-likelihood of integer labels under
    /// softmax(logits[B,D]).
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<S>> {
        let s = self.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Shape(format!(
                "cross_entropy: logits {:?} vs {} labels",
                s,
                labels.len()
            )));
        }
        let (bsz, d) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= d) {
            return Err(Error::Contract(format!(
                "cross_entropy: label {} out of range 0..{}",
                bad, d
            )));
        }
        let x = self.data();
        let mut probs = vec![S::zero(); bsz * d];
        let mut loss = S::zero();
        for r in 0..bsz {
            let row = &x[r * d..(r + 1) * d];
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let prow = &mut probs[r * d..(r + 1) * d];
            let mut sum = S::zero();
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - mx).exp();
                sum = sum + *p;
            }
            for p in prow.iter_mut() {
                *p = *p / sum;
            }
            loss = loss - prow[labels[r]].ln();
        }
        let bn = S::of(bsz as f64);
        loss = loss / bn;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g, bufs| {
                let gv = g[0] / bn;
                for r in 0..bsz {
                    for j in 0..d {
                        let onehot = if j == labels[r] { S::one() } else { S::zero() };
                        bufs[0][r * d + j] = gv * (probs[r * d + j] - onehot);
                    }
                }
            }),
        ))
    }
}

/// Shared layer-norm kernel over `groups` index groups of length `len`;
/// `index(group, i)` maps to the flat position of element i of the group.
fn layer_norm_grouped<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
    groups: usize,
    len: usize,
    index: impl Fn(usize, usize) -> usize + 'static,
) -> Result<Tensor<S>> {
    let xd = x.data().to_vec();
    let gm = gamma.data().to_vec();
    let bt = beta.data().to_vec();
    let inv_len = S::of(1.0 / len as f64);
    let mut out = vec![S::zero(); xd.len()];
    let mut xhat = vec![S::zero(); xd.len()];
    let mut inv_std = vec![S::zero(); groups];
    for grp in 0..groups {
        let mut mean = S::zero();
        for i in 0..len {
            mean = mean + xd[index(grp, i)];
        }
        mean = mean * inv_len;
        let mut var = S::zero();
        for i in 0..len {
            let d = xd[index(grp, i)] - mean;
            var = var + d * d;
        }
        var = var * inv_len;
        let istd = S::one() / (var + eps).sqrt();
        inv_std[grp] = istd;
        for i in 0..len {
            let pos = index(grp, i);
            let xh = (xd[pos] - mean) * istd;
            xhat[pos] = xh;
            out[pos] = gm[i] * xh + bt[i];
        }
    }
    check_finite(&out, "layer_norm")?;
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, bufs| {
            for grp in 0..groups {
                let istd = inv_std[grp];
                let mut mean_dxh = S::zero();
                let mut mean_dxh_xh = S::zero();
                for i in 0..len {
                    let pos = index(grp, i);
                    let dxh = g[pos] * gm[i];
                    mean_dxh = mean_dxh + dxh;
                    mean_dxh_xh = mean_dxh_xh + dxh * xhat[pos];
                }
                mean_dxh = mean_dxh * inv_len;
                mean_dxh_xh = mean_dxh_xh * inv_len;
                for i in 0..len {
                    let pos = index(grp, i);
                    let dxh = g[pos] * gm[i];
                    bufs[0][pos] = istd * (dxh - mean_dxh - xhat[pos] * mean_dxh_xh);
                    bufs[1][i] = bufs[1][i] + g[pos] * xhat[pos];
                    bufs[2][i] = bufs[2][i] + g[pos];
                }
            }
        }),
    ))
}
