//! Elementwise arithmetic and activation primitives.

use super::{check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

// GELU tanh-approximation constants.
const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn binary_shapes<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: &str) -> Result<()> {
    if a.shape() != b.shape() && a.numel() != 1 && b.numel() != 1 {
        return Err(Error::Shape(format!(
            "{op}: operand shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Value of an operand at flat index i, honoring length-1 broadcast.
#[inline]
fn at<S: Scalar>(data: &[S], i: usize) -> S {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

#[inline]
fn acc<S: Scalar>(buf: &mut [S], i: usize, v: S) {
    if buf.len() == 1 {
        buf[0] = buf[0] + v;
    } else {
        buf[i] = buf[i] + v;
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        binary_shapes(self, other, "add")?;
        let n = self.numel().max(other.numel());
        let (a, b) = (self.data(), other.data());
        let out: Vec<S> = (0..n).map(|i| at(a, i) + at(b, i)).collect();
        check_finite(&out, "add")?;
        let shape = if self.numel() >= other.numel() {
            self.shape().to_vec()
        } else {
            other.shape().to_vec()
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                for (i, gv) in g.iter().enumerate() {
                    acc(&mut bufs[0], i, *gv);
                    acc(&mut bufs[1], i, *gv);
                }
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        binary_shapes(self, other, "sub")?;
        let n = self.numel().max(other.numel());
        let (a, b) = (self.data(), other.data());
        let out: Vec<S> = (0..n).map(|i| at(a, i) - at(b, i)).collect();
        check_finite(&out, "sub")?;
        let shape = if self.numel() >= other.numel() {
            self.shape().to_vec()
        } else {
            other.shape().to_vec()
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                for (i, gv) in g.iter().enumerate() {
                    acc(&mut bufs[0], i, *gv);
                    acc(&mut bufs[1], i, -*gv);
                }
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        binary_shapes(self, other, "mul")?;
        let n = self.numel().max(other.numel());
        let (a, b) = (self.data().to_vec(), other.data().to_vec());
        let out: Vec<S> = (0..n).map(|i| at(&a, i) * at(&b, i)).collect();
        check_finite(&out, "mul")?;
        let shape = if self.numel() >= other.numel() {
            self.shape().to_vec()
        } else {
            other.shape().to_vec()
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                for (i, gv) in g.iter().enumerate() {
                    acc(&mut bufs[0], i, *gv * at(&b, i));
                    acc(&mut bufs[1], i, *gv * at(&a, i));
                }
            }),
        ))
    }

    pub fn div(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        binary_shapes(self, other, "div")?;
        let n = self.numel().max(other.numel());
        let (a, b) = (self.data().to_vec(), other.data().to_vec());
        let out: Vec<S> = (0..n).map(|i| at(&a, i) / at(&b, i)).collect();
        check_finite(&out, "div")?;
        let shape = if self.numel() >= other.numel() {
            self.shape().to_vec()
        } else {
            other.shape().to_vec()
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, bufs| {
                for (i, gv) in g.iter().enumerate() {
                    let bv = at(&b, i);
                    acc(&mut bufs[0], i, *gv / bv);
                    acc(&mut bufs[1], i, -*gv * at(&a, i) / (bv * bv));
                }
            }),
        ))
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        let out: Vec<S> = self.data().iter().map(|v| *v + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, bufs| {
                bufs[0].copy_from_slice(g);
            }),
        )
    }

    pub fn mul_scalar(&self, c: S) -> Tensor<S> {
        let out: Vec<S> = self.data().iter().map(|v| *v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for (b, gv) in bufs[0].iter_mut().zip(g) {
                    *b = *gv * c;
                }
            }),
        )
    }

    pub fn neg(&self) -> Tensor<S> {
        self.mul_scalar(-S::one())
    }

    pub fn exp(&self) -> Result<Tensor<S>> {
        let out: Vec<S> = self.data().iter().map(|v| v.exp()).collect();
        check_finite(&out, "exp")?;
        let y = out.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] = g[i] * y[i];
                }
            }),
        ))
    }

    pub fn log(&self) -> Result<Tensor<S>> {
        let out: Vec<S> = self.data().iter().map(|v| v.ln()).collect();
        check_finite(&out, "log")?;
        let x = self.data().to_vec();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] = g[i] / x[i];
                }
            }),
        ))
    }

    /// GELU with the tanh approximation:
    /// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    pub fn gelu(&self) -> Tensor<S> {
        let c0 = S::of(GELU_C0);
        let c1 = S::of(GELU_C1);
        let half = S::of(0.5);
        let three = S::of(3.0);
        let x = self.data().to_vec();
        let out: Vec<S> = x
            .iter()
            .map(|&v| {
                let inner = c0 * (v + c1 * v * v * v);
                half * v * (S::one() + inner.tanh())
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    let v = x[i];
                    let inner = c0 * (v + c1 * v * v * v);
                    let t = inner.tanh();
                    let sech2 = S::one() - t * t;
                    let dinner = c0 * (S::one() + three * c1 * v * v);
                    let dy = half * (S::one() + t) + half * v * sech2 * dinner;
                    bufs[0][i] = g[i] * dy;
                }
            }),
        )
    }

    /// Numerically stable ln(1 + e^x); output is strictly positive.
    pub fn softplus(&self) -> Tensor<S> {
        let x = self.data().to_vec();
        let out: Vec<S> = x
            .iter()
            .map(|&v| v.max(S::zero()) + (-v.abs()).exp().ln_1p())
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] = g[i] * sigmoid_val(x[i]);
                }
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        let out: Vec<S> = self.data().iter().map(|&v| sigmoid_val(v)).collect();
        let y = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, bufs| {
                for i in 0..g.len() {
                    bufs[0][i] = g[i] * y[i] * (S::one() - y[i]);
                }
            }),
        )
    }
}

#[inline]
fn sigmoid_val<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}
