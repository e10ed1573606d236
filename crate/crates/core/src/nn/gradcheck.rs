//! Central finite-difference verification of analytic gradients.

use super::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }
}

/// Compares `analytic[i]` with central differences of `loss` taken over
/// every element of `inputs[i]`.
///
/// `loss` receives the full input list with one element perturbed. Failures
/// are reported, never raised.
pub fn grad_check<F>(
    inputs: &[(String, Tensor<f64>)],
    analytic: &[Tensor<f64>],
    mut loss: F,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input group");
    let mut work: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut groups = Vec::with_capacity(inputs.len());
    for (g, (name, _)) in inputs.iter().enumerate() {
        assert_eq!(work[g].shape(), analytic[g].shape(), "gradient shape for {name}");
        let mut worst = (0.0, 0);
        for i in 0..work[g].len() {
            let orig = work[g].data()[i];
            work[g].data_mut()[i] = orig + FD_STEP;
            let plus = loss(&work);
            work[g].data_mut()[i] = orig - FD_STEP;
            let minus = loss(&work);
            work[g].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[g].data()[i], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (if err.is_nan() { f64::INFINITY } else { err }, i);
            }
        }
        groups.push(GroupError {
            name: name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            checked: work[g].len(),
        });
    }
    GradCheckReport { groups, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let x = Tensor::from_fn(&[4], |i| i as f64 - 1.5);
        let loss = |ts: &[Tensor<f64>]| ts[0].data().iter().map(|v| v * v * v).sum::<f64>();
        let good = x.map(|v| 3.0 * v * v);
        let rep = grad_check(&[("x".into(), x.clone())], &[good], loss, 1e-6);
        assert!(rep.passed(), "{rep:?}");
        let mut bad = x.map(|v| 3.0 * v * v);
        bad.data_mut()[2] *= 1.01;
        let rep = grad_check(&[("x".into(), x)], &[bad], loss, 1e-6);
        assert!(!rep.passed());
        assert_eq!(rep.groups[0].worst_index, 2);
    }
}
