use super::{Mode, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(B, T)`.
///
/// Batch variance is biased (1/N) for normalization; the running variance
/// is updated with the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm1d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Saved activations for the train-mode backward pass.
pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (b, c, t) = x.dims3()?;
        if c != self.channels() {
            return Err(Error::Shape(format!("batchnorm has {} channels, input {c}", self.channels())));
        }
        Ok((b, c, t))
    }

    /// Normalizes with the given per-channel statistics.
    fn normalize(&self, x: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> (Tensor<T>, Tensor<T>) {
        let (b, c, t) = x.dims3().expect("checked");
        let mut x_hat = Tensor::zeros(&[b, c, t]);
        let mut y = Tensor::zeros(&[b, c, t]);
        for bi in 0..b {
            for ch in 0..c {
                let (m, s) = (T::of(mean[ch]), T::of(inv_std[ch]));
                let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
                let off = (bi * c + ch) * t;
                let src = x.row(bi, ch);
                let xh = &mut x_hat.data_mut()[off..off + t];
                for (h, &v) in xh.iter_mut().zip(src) {
                    *h = (v - m) * s;
                }
                let yd = &mut y.data_mut()[off..off + t];
                for (o, &h) in yd.iter_mut().zip(x_hat.data()[off..off + t].iter()) {
                    *o = g * h + be;
                }
            }
        }
        (x_hat, y)
    }

    /// Batch statistics, running-stat update, and a cache for backward.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (b, c, t) = self.check(x)?;
        let n = b * t;
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let s: f64 = (0..b).map(|bi| x.row(bi, ch).iter().map(|v| v.to_f64_lossy()).sum::<f64>()).sum();
            let m = s / n as f64;
            let ss: f64 = (0..b)
                .map(|bi| x.row(bi, ch).iter().map(|v| (v.to_f64_lossy() - m).powi(2)).sum::<f64>())
                .sum();
            mean[ch] = m;
            var[ch] = ss / n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (x_hat, y) = self.normalize(x, &mean, &inv_std);

        let mom = self.momentum;
        let unbias = n as f64 / (n - 1) as f64;
        for ch in 0..c {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = T::of((1.0 - mom) * rm.to_f64_lossy() + mom * mean[ch]);
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = T::of((1.0 - mom) * rv.to_f64_lossy() + mom * var[ch] * unbias);
        }
        Ok((y, BnCache { x_hat, inv_std, mode: Mode::Train }))
    }

    /// Normalization with running statistics only.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_eval_cached(x)?.0)
    }

    pub fn forward_eval_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        self.check(x)?;
        let mean: Vec<f64> = self.running_mean.data().iter().map(|v| v.to_f64_lossy()).collect();
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v.to_f64_lossy() + self.eps).sqrt())
            .collect();
        let (x_hat, y) = self.normalize(x, &mean, &inv_std);
        Ok((y, BnCache { x_hat, inv_std, mode: Mode::Eval }))
    }

    pub fn backward(&self, cache: &BnCache<T>, grad: &Tensor<T>) -> Result<BnGrads<T>> {
        let (b, c, t) = cache.x_hat.dims3()?;
        if grad.shape() != cache.x_hat.shape() {
            return Err(Error::Shape("batchnorm grad shape mismatch".into()));
        }
        let n = (b * t) as f64;
        let mut g_gamma = vec![T::zero(); c];
        let mut g_beta = vec![T::zero(); c];
        let mut g_x = Tensor::zeros(&[b, c, t]);
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for bi in 0..b {
                for (&g, &h) in grad.row(bi, ch).iter().zip(cache.x_hat.row(bi, ch)) {
                    let g = g.to_f64_lossy();
                    sum_g += g;
                    sum_gx += g * h.to_f64_lossy();
                }
            }
            g_gamma[ch] = T::of(sum_gx);
            g_beta[ch] = T::of(sum_g);
            let scale = self.gamma.data()[ch].to_f64_lossy() * cache.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * t;
                let gs = grad.row(bi, ch);
                let hs = cache.x_hat.row(bi, ch);
                let dst = &mut g_x.data_mut()[off..off + t];
                match cache.mode {
                    Mode::Train => {
                        let (mg, mgx) = (T::of(sum_g / n), T::of(sum_gx / n));
                        let s = T::of(scale);
                        for ((d, &g), &h) in dst.iter_mut().zip(gs).zip(hs) {
                            *d = s * (g - mg - h * mgx);
                        }
                    }
                    Mode::Eval => {
                        let s = T::of(scale);
                        for (d, &g) in dst.iter_mut().zip(gs) {
                            *d = s * g;
                        }
                    }
                }
            }
        }
        Ok(BnGrads {
            input: g_x,
            gamma: Tensor::new(vec![c], g_gamma)?,
            beta: Tensor::new(vec![c], g_beta)?,
        })
    }
}

/// Functional form; train mode updates the layer's running statistics.
pub fn batchnorm1d<T: Scalar>(x: &Tensor<T>, layer: &mut BatchNorm1d<T>, mode: Mode) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => Ok(layer.forward_train(x)?.0),
        Mode::Eval => layer.forward_eval(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes() {
        let mut bn = BatchNorm1d::<f64>::new(2);
        let x = Tensor::from_fn(&[3, 2, 7], |i| ((i * 31) % 17) as f64 * 0.7 - 2.0);
        let y = batchnorm1d(&x, &mut bn, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.row(b, ch).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / 21.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 21.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-5);
        }
        assert!(bn.running_var.data().iter().all(|v| *v >= 0.0));
        assert!(bn.running_mean.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn eval_mode_with_unit_stats_is_affine() {
        let mut bn = BatchNorm1d::<f64>::new(1);
        bn.gamma = Tensor::full(&[1], 2.0);
        bn.beta = Tensor::full(&[1], -1.0);
        bn.eps = 0.0;
        let x = Tensor::from_fn(&[1, 1, 4], |i| i as f64);
        let y = batchnorm1d(&x, &mut bn, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0, 3.0, 5.0]);
        assert_eq!(bn.running_mean.data(), &[0.0]);
    }

    #[test]
    fn tiny_batch_rejected_in_train_mode() {
        let mut bn = BatchNorm1d::<f32>::new(1);
        let x = Tensor::zeros(&[1, 1, 1]);
        assert!(matches!(bn.forward_train(&x), Err(Error::BatchTooSmall(1))));
        assert!(bn.forward_eval(&x).is_ok());
    }
}
