//! Max-pooling, nearest-neighbour upsampling and channel concatenation.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output length of ceil-mode pooling.
pub fn pooled_len(t: usize, width: usize) -> usize {
    t.div_ceil(width)
}

/// Max over disjoint windows of `width`; the last window may be shorter.
///
/// Returns the pooled tensor and, for each output element, the flat index of
/// the input element that won (first maximum on ties).
pub fn maxpool1d<T: Scalar>(x: &Tensor<T>, width: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    if width == 0 {
        return Err(Error::Parameter("pool width must be >= 1".into()));
    }
    let (b, c, t) = x.dims3()?;
    let tp = pooled_len(t, width);
    let mut out = Vec::with_capacity(b * c * tp);
    let mut idx = Vec::with_capacity(b * c * tp);
    for row in 0..b * c {
        let base = row * t;
        let src = &x.data()[base..base + t];
        for (w, win) in src.chunks(width).enumerate() {
            let mut best = 0;
            for (i, v) in win.iter().enumerate() {
                if *v > win[best] {
                    best = i;
                }
            }
            out.push(win[best]);
            idx.push(base + w * width + best);
        }
    }
    Ok((Tensor::new(vec![b, c, tp], out)?, idx))
}

/// Routes each pooled gradient to the input element that produced it.
pub fn maxpool1d_backward<T: Scalar>(grad: &Tensor<T>, indices: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if grad.len() != indices.len() {
        return Err(Error::Shape("pool indices do not match gradient".into()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in indices.iter().zip(grad.data()) {
        d[i] += g;
    }
    Ok(gx)
}

/// Repeats every sample `factor` times and right-trims to `target_len`,
/// which must lie in `[factor*T - factor + 1, factor*T]`.
pub fn upsample_nn<T: Scalar>(x: &Tensor<T>, factor: usize, target_len: usize) -> Result<Tensor<T>> {
    let (b, c, t) = x.dims3()?;
    check_upsample(t, factor, target_len)?;
    let mut out = Vec::with_capacity(b * c * target_len);
    for row in 0..b * c {
        let src = &x.data()[row * t..(row + 1) * t];
        out.extend((0..target_len).map(|i| src[i / factor]));
    }
    Tensor::new(vec![b, c, target_len], out)
}

fn check_upsample(t: usize, factor: usize, target_len: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::Parameter("upsample factor must be >= 1".into()));
    }
    let (lo, hi) = (factor * t - factor + 1, factor * t);
    if target_len < lo || target_len > hi {
        return Err(Error::Shape(format!(
            "upsample target {target_len} outside [{lo}, {hi}] for T={t}, factor {factor}"
        )));
    }
    Ok(())
}

pub fn upsample_nn_backward<T: Scalar>(grad: &Tensor<T>, factor: usize, source_len: usize) -> Result<Tensor<T>> {
    let (b, c, target_len) = grad.dims3()?;
    check_upsample(source_len, factor, target_len)?;
    let mut out = vec![T::zero(); b * c * source_len];
    for row in 0..b * c {
        let g = &grad.data()[row * target_len..(row + 1) * target_len];
        let dst = &mut out[row * source_len..(row + 1) * source_len];
        for (i, &v) in g.iter().enumerate() {
            dst[i / factor] += v;
        }
    }
    Tensor::new(vec![b, c, source_len], out)
}

/// `[B, C1, T] ++ [B, C2, T] -> [B, C1 + C2, T]`, `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, ca, ta) = a.dims3()?;
    let (bb, cb, tb) = b.dims3()?;
    if ba != bb || ta != tb {
        return Err(Error::Shape(format!("cannot concat {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for bi in 0..ba {
        out.extend_from_slice(&a.data()[bi * ca * ta..(bi + 1) * ca * ta]);
        out.extend_from_slice(&b.data()[bi * cb * tb..(bi + 1) * cb * tb]);
    }
    Tensor::new(vec![ba, ca + cb, ta], out)
}

/// Inverse of [`concat_channels`]: first `c1` channels, then the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c1: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, t) = x.dims3()?;
    if c1 == 0 || c1 >= c {
        return Err(Error::Shape(format!("cannot split {c} channels at {c1}")));
    }
    let c2 = c - c1;
    let mut a = Vec::with_capacity(b * c1 * t);
    let mut rest = Vec::with_capacity(b * c2 * t);
    for bi in 0..b {
        let base = bi * c * t;
        a.extend_from_slice(&x.data()[base..base + c1 * t]);
        rest.extend_from_slice(&x.data()[base + c1 * t..base + c * t]);
    }
    Ok((Tensor::new(vec![b, c1, t], a)?, Tensor::new(vec![b, c2, t], rest)?))
}
