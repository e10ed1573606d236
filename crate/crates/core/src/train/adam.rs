use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Steps taken so far.
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    /// Moment tensors as `adam.m.<name>` / `adam.v.<name>` entries.
    pub fn to_named(&self, names: &[String]) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * names.len());
        for (n, m) in names.iter().zip(&self.m) {
            out.push((format!("adam.m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(&self.v) {
            out.push((format!("adam.v.{n}"), v.clone()));
        }
        out
    }

    /// Inverse of [`to_named`](Self::to_named); every name must be present
    /// with the shape of the matching parameter.
    pub fn from_named(named: &[(String, Tensor<T>)], names: &[String], params: &[&Tensor<T>], step: u64) -> Result<Self> {
        let find = |key: String, shape: &[usize]| -> Result<Tensor<T>> {
            let t = named
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Format(format!("missing optimizer tensor {key}")))?;
            if t.shape() != shape {
                return Err(Error::Format(format!("optimizer tensor {key} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (n, p) in names.iter().zip(params) {
            m.push(find(format!("adam.m.{n}"), p.shape())?);
            v.push(find(format!("adam.v.{n}"), p.shape())?);
        }
        Ok(Self { m, v, step })
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("adam: parameter {i} is {:?}, gradient {:?}", p.shape(), g.shape())));
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in tensor {i} at element {pos}")));
        }
    }
    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step_size = T::of(cfg.learning_rate / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
    let eps = T::of(cfg.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            *w -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    state.step = t;
    Ok(())
}
