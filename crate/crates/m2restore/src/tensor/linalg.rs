//! Matrix products, reshapes and bias broadcasting.

use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// c[m,n] += a[m,k] * b[k,n]
pub(crate) fn mm_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T
pub(crate) fn mm_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                s = s + av * bv;
            }
            c[i * n + j] = c[i * n + j] + s;
        }
    }
}

/// c[m,n] += a[k,m]^T * b[k,n]
pub(crate) fn mm_tn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// 2-D matrix product [m,k]·[k,n] → [m,n].
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        mm_nn(self.data(), other.data(), &mut out, m, k, n);
        check_finite(&out, "matmul")?;
        let a = self.data().to_vec();
        let b = other.data().to_vec();
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                mm_nt(g, &b, &mut bufs[0], m, n, k); // dA = G · B^T
                mm_tn(&a, g, &mut bufs[1], k, m, n); // dB = A^T · G
            }),
        ))
    }

    /// Batched matrix product [q,m,k]·[q,k,n] → [q,m,n].
    pub fn bmm(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape(format!("bmm: {:?} x {:?}", sa, sb)));
        }
        let (q, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![S::zero(); q * m * n];
        for i in 0..q {
            mm_nn(
                &self.data()[i * m * k..],
                &other.data()[i * k * n..],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        check_finite(&out, "bmm")?;
        let a = self.data().to_vec();
        let b = other.data().to_vec();
        Ok(Tensor::from_op(
            vec![q, m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                for i in 0..q {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    mm_nt(gi, &b[i * k * n..], &mut bufs[0][i * m * k..(i + 1) * m * k], m, n, k);
                    mm_tn(&a[i * m * k..], gi, &mut bufs[1][i * k * n..(i + 1) * k * n], k, m, n);
                }
            }),
        ))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor (copying).
    pub fn transpose_last2(&self) -> Result<Tensor<S>> {
        let s = self.shape();
        let (q, m, n) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => {
                return Err(Error::Shape(format!(
                    "transpose_last2 on rank-{} tensor",
                    s.len()
                )))
            }
        };
        let mut out = vec![S::zero(); self.numel()];
        let src = self.data();
        for b in 0..q {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = src[base + i * n + j];
                }
            }
        }
        let new_shape: Vec<usize> = if s.len() == 2 {
            vec![n, m]
        } else {
            vec![q, n, m]
        };
        Ok(Tensor::from_op(
            new_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for b in 0..q {
                    let base = b * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            bufs[0][base + i * n + j] = g[base + j * m + i];
                        }
                    }
                }
            }),
        ))
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Shape(format!(
                "reshape {:?} → {:?}",
                self.shape(),
                new_shape
            )));
        }
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, bufs| {
                bufs[0].copy_from_slice(g);
            }),
        ))
    }

    /// x[.., n] + b[n] broadcast over all leading rows.
    pub fn add_bias(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let n = *self.shape().last().ok_or_else(|| {
            Error::Shape("add_bias on rank-0 tensor".into())
        })?;
        if bias.shape() != [n] {
            return Err(Error::Shape(format!(
                "add_bias: x {:?} vs bias {:?}",
                self.shape(),
                bias.shape()
            )));
        }
        let b = bias.data().to_vec();
        let out: Vec<S> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        check_finite(&out, "add_bias")?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, bufs| {
                bufs[0].copy_from_slice(g);
                for (i, gv) in g.iter().enumerate() {
                    bufs[1][i % n] = bufs[1][i % n] + *gv;
                }
            }),
        ))
    }

    /// x[.., n] ⊙ v[n] broadcast over all leading rows.
    pub fn mul_bias(&self, v: &Tensor<S>) -> Result<Tensor<S>> {
        let n = *self.shape().last().ok_or_else(|| {
            Error::Shape("mul_bias on rank-0 tensor".into())
        })?;
        if v.shape() != [n] {
            return Err(Error::Shape(format!(
                "mul_bias: x {:?} vs v {:?}",
                self.shape(),
                v.shape()
            )));
        }
        let vv = v.data().to_vec();
        let x = self.data().to_vec();
        let out: Vec<S> = x.iter().enumerate().map(|(i, &a)| a * vv[i % n]).collect();
        check_finite(&out, "mul_bias")?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), v.clone()],
            Box::new(move |g, bufs| {
                for (i, gv) in g.iter().enumerate() {
                    bufs[0][i] = *gv * vv[i % n];
                    bufs[1][i % n] = bufs[1][i % n] + *gv * x[i];
                }
            }),
        ))
    }

    /// y = x·W (+ b) over the last axis: x[.., d_in], W[d_in, d_out].
    pub fn linear(&self, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        let s = self.shape();
        let d_in = *s.last().ok_or_else(|| Error::Shape("linear on rank-0 tensor".into()))?;
        if w.shape().len() != 2 || w.shape()[0] != d_in {
            return Err(Error::Shape(format!(
                "linear: x {:?} vs W {:?}",
                s,
                w.shape()
            )));
        }
        let d_out = w.shape()[1];
        let rows = self.numel() / d_in;
        let x2 = self.reshape(&[rows, d_in])?;
        let mut y = x2.matmul(w)?;
        if let Some(b) = b {
            y = y.add_bias(b)?;
        }
        let mut out_shape = s[..s.len() - 1].to_vec();
        out_shape.push(d_out);
        y.reshape(&out_shape)
    }
}
