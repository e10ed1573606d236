//! Stride-1 "same" 1D convolution (cross-correlation, no kernel flip).

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    /// `[out_ch, in_ch, k]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv1d<T> {
    /// Builds a layer with length-preserving padding. For even spans the
    /// extra padding sample goes on the right.
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, dilation: usize) -> Result<Self> {
        let (out_ch, _, k) = match weight.shape()[..] {
            [o, c, k] => (o, c, k),
            _ => return Err(Error::Shape(format!("kernel must be [O, C, K], got {:?}", weight.shape()))),
        };
        if bias.shape() != [out_ch] {
            return Err(Error::Shape(format!("bias must be [{out_ch}], got {:?}", bias.shape())));
        }
        if dilation == 0 {
            return Err(Error::Parameter("dilation must be >= 1".into()));
        }
        let span = dilation * (k - 1);
        Ok(Self { weight, bias, dilation, pad_left: span / 2, pad_right: span - span / 2 })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, k: usize, dilation: usize) -> Self {
        Self::new(Tensor::zeros(&[out_ch, in_ch, k]), Tensor::zeros(&[out_ch]), dilation)
            .expect("valid conv shape")
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_size() == 1
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (b, c, t) = x.dims3()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok((b, c, t))
    }

    /// `cols[(c * K + j), t] = x[c, t + j * d - pad_left]`, zero outside.
    fn im2col(&self, x: &[T], c_in: usize, t_len: usize) -> Vec<T> {
        let k = self.kernel_size();
        let mut cols = vec![T::zero(); c_in * k * t_len];
        for c in 0..c_in {
            let src = &x[c * t_len..(c + 1) * t_len];
            for j in 0..k {
                let dst = &mut cols[(c * k + j) * t_len..(c * k + j + 1) * t_len];
                let (lo, hi, off) = self.valid_range(j, t_len);
                if lo < hi {
                    dst[lo..hi].copy_from_slice(&src[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                }
            }
        }
        cols
    }

    /// Output positions `[lo, hi)` whose tap `j` reads inside the input, and
    /// the input offset for that tap.
    fn valid_range(&self, j: usize, t_len: usize) -> (usize, usize, isize) {
        let off = (j * self.dilation) as isize - self.pad_left as isize;
        let lo = (-off).max(0) as usize;
        let hi = ((t_len as isize - off).min(t_len as isize)).max(0) as usize;
        (lo.min(hi), hi, off)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c_in, t_len) = self.check_input(x)?;
        let (o, k) = (self.out_channels(), self.kernel_size());
        let mut out = Tensor::zeros(&[b, o, t_len]);
        out.data_mut()
            .par_chunks_mut(o * t_len)
            .zip(x.data().par_chunks(c_in * t_len))
            .for_each(|(dst, src)| {
                for (oc, row) in dst.chunks_mut(t_len).enumerate() {
                    row.fill(self.bias.data()[oc]);
                }
                let w = MatRef::new(self.weight.data(), o, c_in * k);
                if self.is_pointwise() {
                    gemm(w, MatRef::new(src, c_in, t_len), T::one(), dst);
                } else {
                    let cols = self.im2col(src, c_in, t_len);
                    gemm(w, MatRef::new(&cols, c_in * k, t_len), T::one(), dst);
                }
            });
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (b, c_in, t_len) = self.check_input(x)?;
        let (o, k) = (self.out_channels(), self.kernel_size());
        if grad_out.shape() != [b, o, t_len] {
            return Err(Error::Shape(format!(
                "conv grad must be {:?}, got {:?}",
                [b, o, t_len],
                grad_out.shape()
            )));
        }
        let ck = c_in * k;
        let mut grad_x = Tensor::zeros(&[b, c_in, t_len]);
        let partial_w: Vec<Vec<T>> = grad_x
            .data_mut()
            .par_chunks_mut(c_in * t_len)
            .zip(x.data().par_chunks(c_in * t_len))
            .zip(grad_out.data().par_chunks(o * t_len))
            .map(|((gx, src), g)| {
                let g_mat = MatRef::new(g, o, t_len);
                let w = MatRef::new(self.weight.data(), o, ck);
                let mut gw = vec![T::zero(); o * ck];
                if self.is_pointwise() {
                    gemm(g_mat, MatRef::new(src, c_in, t_len).t(), T::zero(), &mut gw);
                    gemm(w.t(), g_mat, T::zero(), gx);
                } else {
                    let cols = self.im2col(src, c_in, t_len);
                    gemm(g_mat, MatRef::new(&cols, ck, t_len).t(), T::zero(), &mut gw);
                    let mut gcols = vec![T::zero(); ck * t_len];
                    gemm(w.t(), g_mat, T::zero(), &mut gcols);
                    for c in 0..c_in {
                        let dst = &mut gx[c * t_len..(c + 1) * t_len];
                        for j in 0..k {
                            let (lo, hi, off) = self.valid_range(j, t_len);
                            let src_row = &gcols[(c * k + j) * t_len..(c * k + j + 1) * t_len];
                            let d = &mut dst[(lo as isize + off) as usize..(hi as isize + off) as usize];
                            for (a, v) in d.iter_mut().zip(&src_row[lo..hi]) {
                                *a += *v;
                            }
                        }
                    }
                }
                gw
            })
            .collect();

        let mut grad_w = vec![T::zero(); o * ck];
        for part in &partial_w {
            for (a, v) in grad_w.iter_mut().zip(part) {
                *a += *v;
            }
        }
        let mut grad_b = vec![T::zero(); o];
        for bi in 0..b {
            for (oc, gb) in grad_b.iter_mut().enumerate() {
                *gb += grad_out.row(bi, oc).iter().copied().sum::<T>();
            }
        }
        Ok(ConvGrads {
            input: grad_x,
            weight: Tensor::new(vec![o, c_in, k], grad_w)?,
            bias: Tensor::new(vec![o], grad_b)?,
        })
    }
}

/// `out[b, o, t] = bias[o] + sum_{c, j} kernel[o, c, j] * x_pad[b, c, t + j * d]`
pub fn conv1d<T: Scalar>(x: &Tensor<T>, layer: &Conv1d<T>) -> Result<Tensor<T>> {
    layer.forward(x)
}

pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &Conv1d<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    layer.backward(x, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(b: usize, c: usize, t: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![b, c, t], v).unwrap()
    }

    /// Direct evaluation of the defining sum.
    fn naive(x: &Tensor<f64>, l: &Conv1d<f64>) -> Vec<f64> {
        let (b, c_in, t_len) = x.dims3().unwrap();
        let (o, k) = (l.out_channels(), l.kernel_size());
        let mut out = vec![0.0; b * o * t_len];
        for bi in 0..b {
            for oc in 0..o {
                for t in 0..t_len {
                    let mut acc = l.bias.data()[oc];
                    for c in 0..c_in {
                        for j in 0..k {
                            let idx = t as isize + (j * l.dilation) as isize - l.pad_left as isize;
                            if idx >= 0 && (idx as usize) < t_len {
                                acc += l.weight.data()[(oc * c_in + c) * k + j] * x.row(bi, c)[idx as usize];
                            }
                        }
                    }
                    out[(bi * o + oc) * t_len + t] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn hand_example() {
        let l = Conv1d::new(t3(1, 1, 3, vec![1.0, 0.0, -1.0]), Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!((l.pad_left, l.pad_right), (1, 1));
        let y = conv1d(&t3(1, 1, 3, vec![1.0, 2.0, 3.0]), &l).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn identity_kernel_and_zero_input() {
        let l = Conv1d::new(t3(1, 1, 1, vec![1.0]), Tensor::zeros(&[1]), 1).unwrap();
        let x = t3(1, 1, 4, vec![3.0, -1.0, 2.0, 5.0]);
        assert_eq!(conv1d(&x, &l).unwrap(), x);

        let l = Conv1d::new(
            Tensor::from_fn(&[2, 1, 3], |i| i as f64 - 2.0),
            Tensor::new(vec![2], vec![0.5, -1.5]).unwrap(),
            2,
        )
        .unwrap();
        let y = conv1d(&Tensor::zeros(&[1, 1, 6]), &l).unwrap();
        assert!(y.row(0, 0).iter().all(|v| *v == 0.5));
        assert!(y.row(0, 1).iter().all(|v| *v == -1.5));
    }

    #[test]
    fn gemm_path_matches_definition() {
        for (k, d) in [(1, 1), (3, 1), (4, 1), (7, 2), (5, 3)] {
            let l = Conv1d::new(
                Tensor::from_fn(&[3, 2, k], |i| ((i * 7) % 5) as f64 - 2.0),
                Tensor::from_fn(&[3], |i| i as f64 * 0.1),
                d,
            )
            .unwrap();
            let x = Tensor::from_fn(&[2, 2, 9], |i| ((i * 13) % 11) as f64 / 3.0);
            let y = conv1d(&x, &l).unwrap();
            let want = naive(&x, &l);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k} d={d}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let l = Conv1d::<f32>::zeros(2, 3, 3, 1);
        assert!(matches!(conv1d(&Tensor::zeros(&[1, 2, 8]), &l), Err(Error::Shape(_))));
        assert!(l.backward(&Tensor::zeros(&[1, 3, 8]), &Tensor::zeros(&[1, 2, 7])).is_err());
    }

    #[test]
    fn bias_gradient_is_channel_sum() {
        let l = Conv1d::new(Tensor::from_fn(&[2, 1, 3], |i| i as f64), Tensor::zeros(&[2]), 1).unwrap();
        let x = Tensor::from_fn(&[2, 1, 5], |i| i as f64);
        let g = Tensor::from_fn(&[2, 2, 5], |i| (i % 4) as f64);
        let grads = l.backward(&x, &g).unwrap();
        for oc in 0..2 {
            let want: f64 = (0..2).map(|b| g.row(b, oc).iter().sum::<f64>()).sum();
            assert_eq!(grads.bias.data()[oc], want);
        }
    }

    #[test]
    fn pointwise_input_gradient_is_weighted_grad() {
        let l = Conv1d::new(t3(1, 1, 1, vec![2.5]), Tensor::zeros(&[1]), 1).unwrap();
        let x = t3(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let g = t3(1, 1, 4, vec![1.0, -1.0, 0.5, 2.0]);
        let grads = l.backward(&x, &g).unwrap();
        assert_eq!(grads.input.data(), &[2.5, -2.5, 1.25, 5.0]);
    }
}
