//! Gradient verification of every layer and of a small full network, in
//! f64 against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, ModelParams};
use crate::error::Result;
use crate::nn::{
    concat_channels, grad_check, maxpool1d, maxpool1d_backward, relu, relu_backward, softmax_channels,
    softmax_channels_backward, upsample_nn, upsample_nn_backward, BatchNorm1d, Conv1d, GradCheckReport, Tensor,
};
use crate::train::{generalized_dice_loss, one_hot, LabelMask};

/// Tolerance for composite checks.
pub const TOLERANCE: f64 = 1e-4;
/// Tolerance for the single convolution check.
pub const CONV_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

impl NamedReport {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so no finite-difference step crosses a
/// ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn named(pairs: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

pub fn check_conv(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 3, 20], -1.0, 1.0);
    let layer = Conv1d::new(uniform(&mut rng, &[2, 3, 5], -0.5, 0.5), uniform(&mut rng, &[2], -0.5, 0.5), 2)?;
    let probe = uniform(&mut rng, &[2, 2, 20], -1.0, 1.0);
    let g = layer.backward(&x, &probe)?;
    let inputs = named(vec![("input", x), ("weight", layer.weight.clone()), ("bias", layer.bias.clone())]);
    let report = grad_check(
        &inputs,
        &[g.input, g.weight, g.bias],
        |v| {
            let l = Conv1d::new(v[1].clone(), v[2].clone(), 2).expect("shape");
            dot(&l.forward(&v[0]).expect("forward"), &probe)
        },
        CONV_TOLERANCE,
    );
    Ok(NamedReport { name: "conv1d".into(), report })
}

pub fn check_relu(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&mut rng, &[2, 3, 16]);
    let probe = uniform(&mut rng, &[2, 3, 16], -1.0, 1.0);
    let g = relu_backward(&x, &probe)?;
    let report = grad_check(&named(vec![("input", x)]), &[g], |v| dot(&relu(&v[0]), &probe), TOLERANCE);
    Ok(NamedReport { name: "relu".into(), report })
}

pub fn check_batchnorm(seed: u64, train: bool) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[3, 2, 10], -2.0, 2.0);
    let mut layer = BatchNorm1d::<f64>::new(2);
    layer.gamma = uniform(&mut rng, &[2], 0.5, 1.5);
    layer.beta = uniform(&mut rng, &[2], -0.5, 0.5);
    layer.running_mean = uniform(&mut rng, &[2], -0.5, 0.5);
    layer.running_var = uniform(&mut rng, &[2], 0.5, 2.0);
    let probe = uniform(&mut rng, &[3, 2, 10], -1.0, 1.0);
    let run = |l: &BatchNorm1d<f64>, x: &Tensor<f64>| {
        if train {
            l.clone().forward_train(x).expect("bn")
        } else {
            l.forward_eval_cached(x).expect("bn")
        }
    };
    let (_, cache) = run(&layer, &x);
    let g = layer.backward(&cache, &probe)?;
    let inputs = named(vec![("input", x), ("gamma", layer.gamma.clone()), ("beta", layer.beta.clone())]);
    let report = grad_check(
        &inputs,
        &[g.input, g.gamma, g.beta],
        |v| {
            let mut l = layer.clone();
            l.gamma = v[1].clone();
            l.beta = v[2].clone();
            dot(&run(&l, &v[0]).0, &probe)
        },
        TOLERANCE,
    );
    let name = if train { "batchnorm (train)" } else { "batchnorm (eval)" };
    Ok(NamedReport { name: name.into(), report })
}

pub fn check_maxpool(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // distinct values 0.01 apart: no step can change an argmax
    let n = 2 * 2 * 18;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new(vec![2, 2, 18], vals)?;
    let (y, idx) = maxpool1d(&x, 4)?;
    let probe = uniform(&mut rng, y.shape(), -1.0, 1.0);
    let g = maxpool1d_backward(&probe, &idx, x.shape())?;
    let report = grad_check(&named(vec![("input", x)]), &[g], |v| dot(&maxpool1d(&v[0], 4).expect("pool").0, &probe), TOLERANCE);
    Ok(NamedReport { name: "maxpool1d".into(), report })
}

pub fn check_upsample(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 3, 5], -1.0, 1.0);
    let probe = uniform(&mut rng, &[2, 3, 18], -1.0, 1.0);
    let g = upsample_nn_backward(&probe, 4, 5)?;
    let report = grad_check(&named(vec![("input", x)]), &[g], |v| dot(&upsample_nn(&v[0], 4, 18).expect("up"), &probe), TOLERANCE);
    Ok(NamedReport { name: "upsample_nn".into(), report })
}

pub fn check_concat(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, &[2, 2, 6], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 3, 6], -1.0, 1.0);
    let probe = uniform(&mut rng, &[2, 5, 6], -1.0, 1.0);
    let (ga, gb) = crate::nn::split_channels(&probe, 2)?;
    let report = grad_check(
        &named(vec![("a", a), ("b", b)]),
        &[ga, gb],
        |v| dot(&concat_channels(&v[0], &v[1]).expect("concat"), &probe),
        TOLERANCE,
    );
    Ok(NamedReport { name: "concat".into(), report })
}

pub fn check_softmax(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 2, 12], -3.0, 3.0);
    let probe = uniform(&mut rng, &[2, 2, 12], -1.0, 1.0);
    let y = softmax_channels(&x)?;
    let g = softmax_channels_backward(&y, &probe)?;
    let report = grad_check(&named(vec![("input", x)]), &[g], |v| dot(&softmax_channels(&v[0]).expect("softmax"), &probe), TOLERANCE);
    Ok(NamedReport { name: "softmax".into(), report })
}

fn random_labels(rng: &mut ChaCha8Rng, b: usize, t: usize) -> Result<Tensor<f64>> {
    let masks: Vec<LabelMask> = (0..b)
        .map(|_| {
            let start = rng.random_range(0..t / 2);
            let len = rng.random_range(1..t / 2);
            LabelMask { values: (0..t).map(|i| (start..start + len).contains(&i)).collect() }
        })
        .collect();
    one_hot(&masks.iter().collect::<Vec<_>>())
}

pub fn check_dice_loss(seed: u64) -> Result<NamedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_labels(&mut rng, 2, 32)?;
    let p = softmax_channels(&uniform(&mut rng, &[2, 2, 32], -2.0, 2.0))?;
    let (_, g) = generalized_dice_loss(&p, &r)?;
    let report = grad_check(&named(vec![("probabilities", p)]), &[g], |v| generalized_dice_loss(&v[0], &r).expect("loss").0, TOLERANCE);
    Ok(NamedReport { name: "generalized dice loss".into(), report })
}

/// Full network in train mode with the dice loss, gradients for every
/// learnable tensor and the input.
pub fn check_model(arch: &ArchConfig, batch: usize, len: usize, seed: u64) -> Result<NamedReport> {
    let mut model = ModelParams::<f64>::build(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // non-trivial batch-norm affine parameters and biases
    for t in model.learnable_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let x = uniform(&mut rng, &[batch, 1, len], -2.0, 2.0);
    let r = random_labels(&mut rng, batch, len)?;
    let (probs, cache) = model.clone().forward_train(&x)?;
    let (_, gp) = generalized_dice_loss(&probs, &r)?;
    let grads = model.backward(&cache, &gp)?;

    let mut inputs: Vec<(String, Tensor<f64>)> =
        model.learnable_names().into_iter().zip(model.learnable().into_iter().cloned()).collect();
    inputs.push(("input".into(), x));
    let mut analytic: Vec<Tensor<f64>> = grads.learnable().into_iter().cloned().collect();
    analytic.push(grads.input);
    let report = grad_check(
        &inputs,
        &analytic,
        |v| {
            let mut m = model.clone();
            for (dst, src) in m.learnable_mut().into_iter().zip(v) {
                *dst = src.clone();
            }
            let probs = m.forward_train(&v[v.len() - 1]).expect("forward").0;
            generalized_dice_loss(&probs, &r).expect("loss").0
        },
        TOLERANCE,
    );
    Ok(NamedReport { name: format!("model (levels {}, T={len})", arch.levels), report })
}

/// Every layer check plus the two-level network on 64 samples.
pub fn verify_all(seed: u64) -> Result<Vec<NamedReport>> {
    Ok(vec![
        check_conv(seed)?,
        check_relu(seed)?,
        check_batchnorm(seed, true)?,
        check_batchnorm(seed, false)?,
        check_maxpool(seed)?,
        check_upsample(seed)?,
        check_concat(seed)?,
        check_softmax(seed)?,
        check_dice_loss(seed)?,
        check_model(&ArchConfig::tiny(), 2, 64, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in verify_all(1).unwrap() {
            for g in &r.report.groups {
                assert!(g.max_rel_error < r.report.tolerance, "{}: {} {:e}", r.name, g.name, g.max_rel_error);
            }
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = uniform(&mut rng, &[1, 2, 8], -1.0, 1.0);
        let probe = uniform(&mut rng, &[1, 2, 8], -1.0, 1.0);
        let y = softmax_channels(&x).unwrap();
        let wrong = softmax_channels_backward(&y, &probe).unwrap().map(|v| v * 1.01);
        let rep = grad_check(&named(vec![("x", x)]), &[wrong], |v| dot(&softmax_channels(&v[0]).unwrap(), &probe), TOLERANCE);
        assert!(!rep.passed());
    }
}
