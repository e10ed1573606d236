use crate::error::{Error, Result};
use crate::metrics::{validate_events, SpindleEvent};
use crate::model::{NO_SPINDLE, SPINDLE};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Regularizer added to each class-weight denominator and to both terms of
/// the loss ratio.
pub const GDL_EPS: f64 = 1e-5;

/// Per-sample reference labels, `true` = spindle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub values: Vec<bool>,
}

impl LabelMask {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }
}

/// Sample `t` is set iff `t / fs` lies in `[onset, onset + duration)` of
/// some event.
pub fn rasterize(events: &[SpindleEvent], fs: f64, len: usize) -> Result<LabelMask> {
    validate_events(events, None)?;
    let mut values = vec![false; len];
    // event times written with limited precision should still land on the
    // intended sample boundaries
    let edge = |s: f64| (s * fs - 1e-6).ceil().max(0.0) as usize;
    for ev in events {
        if ev.end_s() * fs > len as f64 + 1e-6 {
            return Err(Error::Validation(format!(
                "event {ev:?} extends past the {len}-sample segment"
            )));
        }
        let (a, b) = (edge(ev.onset_s), edge(ev.end_s()).min(len));
        values[a.min(b)..b].iter_mut().for_each(|v| *v = true);
    }
    Ok(LabelMask { values })
}

/// `[B, 2, T]` one-hot targets from equally long masks.
pub fn one_hot<T: Scalar>(masks: &[&LabelMask]) -> Result<Tensor<T>> {
    let Some(first) = masks.first() else {
        return Err(Error::Shape("one_hot needs at least one mask".into()));
    };
    let t = first.len();
    if masks.iter().any(|m| m.len() != t) {
        return Err(Error::Shape("masks in a batch must share a length".into()));
    }
    let mut data = vec![T::zero(); masks.len() * 2 * t];
    for (b, m) in masks.iter().enumerate() {
        for (i, &on) in m.values.iter().enumerate() {
            let c = if on { SPINDLE } else { NO_SPINDLE };
            data[(b * 2 + c) * t + i] = T::one();
        }
    }
    Tensor::new(vec![masks.len(), 2, t], data)
}

/// Generalized dice loss and its gradient with respect to `p`.
///
/// `w_l = 1 / ((sum_n r_ln)^2 + eps)`, normalized to sum to one;
/// `loss = 1 - (2 sum_l w_l sum_n r_ln p_ln + eps) / (sum_l w_l sum_n (r_ln + p_ln) + eps)`,
/// with sums over every sample of the batch. Accumulation is in f64.
pub fn generalized_dice_loss<T: Scalar>(p: &Tensor<T>, r: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if p.shape() != r.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", p.shape(), r.shape())));
    }
    let (b, c, t) = p.dims3()?;
    let (pd, rd) = (p.data(), r.data());
    let idx = |bi: usize, l: usize| (bi * c + l) * t;
    let mut r_sum = vec![0.0f64; c];
    let mut p_sum = vec![0.0f64; c];
    let mut inter = vec![0.0f64; c];
    for bi in 0..b {
        for l in 0..c {
            let o = idx(bi, l);
            for i in 0..t {
                let (pv, rv) = (pd[o + i].to_f64_lossy(), rd[o + i].to_f64_lossy());
                r_sum[l] += rv;
                p_sum[l] += pv;
                inter[l] += rv * pv;
            }
        }
    }
    let raw: Vec<f64> = r_sum.iter().map(|s| 1.0 / (s * s + GDL_EPS)).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let num: f64 = (0..c).map(|l| w[l] * inter[l]).sum::<f64>() * 2.0 + GDL_EPS;
    let den: f64 = (0..c).map(|l| w[l] * (r_sum[l] + p_sum[l])).sum::<f64>() + GDL_EPS;
    let loss = 1.0 - num / den;

    let den2 = den * den;
    let mut grad = vec![T::zero(); pd.len()];
    for bi in 0..b {
        for l in 0..c {
            let o = idx(bi, l);
            for i in 0..t {
                let rv = rd[o + i].to_f64_lossy();
                grad[o + i] = T::of(-w[l] * (2.0 * rv * den - num) / den2);
            }
        }
    }
    Ok((loss, Tensor::new(p.shape().to_vec(), grad)?))
}
