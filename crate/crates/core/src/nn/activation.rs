use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad` where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad.shape() {
        return Err(Error::Shape(format!("relu grad {:?} vs input {:?}", grad.shape(), x.shape())));
    }
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Softmax over the channel axis of a `[B, C, T]` tensor, max-subtracted.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, t) = x.dims3()?;
    let mut out = x.clone();
    let data = out.data_mut();
    for bi in 0..b {
        let base = bi * c * t;
        for ti in 0..t {
            let idx = |ch: usize| base + ch * t + ti;
            let max = (0..c).map(|ch| data[idx(ch)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for ch in 0..c {
                let e = (data[idx(ch)] - max).exp();
                data[idx(ch)] = e;
                sum += e;
            }
            for ch in 0..c {
                data[idx(ch)] /= sum;
            }
        }
    }
    Ok(out)
}

/// Backward through softmax given its output `y`:
/// `dx_c = y_c * (g_c - sum_k y_k g_k)`.
pub fn softmax_channels_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, t) = y.dims3()?;
    if grad.shape() != y.shape() {
        return Err(Error::Shape("softmax grad shape mismatch".into()));
    }
    let mut out = Tensor::zeros(&[b, c, t]);
    let (yd, gd) = (y.data(), grad.data());
    let od = out.data_mut();
    for bi in 0..b {
        let base = bi * c * t;
        for ti in 0..t {
            let dot: T = (0..c).map(|ch| yd[base + ch * t + ti] * gd[base + ch * t + ti]).sum();
            for ch in 0..c {
                let i = base + ch * t + ti;
                od[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let p = Tensor::new(vec![2], vec![0.5f64, 3.0]).unwrap();
        assert_eq!(relu(&p), p);
        let x = Tensor::new(vec![3], vec![-1.0f64, 2.0, 0.0]).unwrap();
        let g = Tensor::new(vec![3], vec![5.0, 7.0, 9.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 7.0, 0.0]);
    }

    #[test]
    fn softmax_values() {
        let x = Tensor::new(vec![1, 2, 3], vec![0.0f64, 1000.0, 1.0, 0.0, 0.0, -1.0]).unwrap();
        let y = softmax_channels(&x).unwrap();
        assert_eq!(y.row(0, 0)[0], 0.5);
        assert_eq!(y.row(0, 1)[0], 0.5);
        assert_eq!(y.row(0, 0)[1], 1.0);
        assert!(y.row(0, 1)[1] >= 0.0 && y.row(0, 1)[1] < 1e-300);
        let e2 = 1f64.exp().powi(2);
        assert!((y.row(0, 0)[2] - e2 / (1.0 + e2)).abs() < 1e-15);
        assert!((y.row(0, 0)[2] - 0.8808).abs() < 1e-4);
        assert!((y.row(0, 1)[2] - 0.1192).abs() < 1e-4);
    }
}
