use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::SpindleEvent;
use crate::dsp::Cohort;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvents {
    pub duration_s: f64,
    pub events: Vec<SpindleEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEvents {
    pub subject_id: String,
    pub cohort: Cohort,
    pub segments: Vec<SegmentEvents>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub subject_id: String,
    pub cohort: Cohort,
    pub event_count: usize,
    pub density_per_min: f64,
    /// `None` when the subject has no events.
    pub mean_duration_s: Option<f64>,
    pub total_minutes: f64,
}

/// Spindle density and mean duration per subject.
pub fn subject_stats(subjects: &[SubjectEvents]) -> Result<Vec<SubjectStats>> {
    subjects
        .iter()
        .map(|s| {
            if s.segments.iter().any(|g| !(g.duration_s > 0.0 && g.duration_s.is_finite())) {
                return Err(Error::Validation(format!("subject {} has a segment without positive duration", s.subject_id)));
            }
            let total_minutes: f64 = s.segments.iter().map(|g| g.duration_s).sum::<f64>() / 60.0;
            if total_minutes <= 0.0 {
                return Err(Error::Validation(format!("subject {} has no recorded minutes", s.subject_id)));
            }
            let event_count: usize = s.segments.iter().map(|g| g.events.len()).sum();
            let total_dur: f64 = s.segments.iter().flat_map(|g| g.events.iter()).map(|e| e.duration_s).sum();
            Ok(SubjectStats {
                subject_id: s.subject_id.clone(),
                cohort: s.cohort,
                event_count,
                density_per_min: event_count as f64 / total_minutes,
                mean_duration_s: (event_count > 0).then(|| total_dur / event_count as f64),
                total_minutes,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub r: f64,
    pub r2: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Two-sided p-value of `r` against zero correlation (t-test, n - 2 dof).
    pub p_value: f64,
}

/// Pearson correlation and the least-squares line `y = slope * x + intercept`,
/// with `x` the reference values and `y` the detector values.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("correlate: {} vs {} values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("correlate needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("correlate: non-finite value".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("correlate: zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = nf - 2.0;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Numerical(e.to_string()))?;
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(Correlation { n, r, r2: r * r, slope, intercept, p_value })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherComparison {
    pub z1: f64,
    pub z2: f64,
    pub z_stat: f64,
    pub p_two_sided: f64,
}

/// Compares two independent Pearson correlations on Fisher's `atanh` scale.
pub fn compare_correlations(r1: f64, n1: usize, r2: f64, n2: usize) -> Result<FisherComparison> {
    for (r, n) in [(r1, n1), (r2, n2)] {
        if !r.is_finite() || r.abs() >= 1.0 {
            return Err(Error::Degenerate(format!("Fisher transform of r = {r} is infinite")));
        }
        if n < 4 {
            return Err(Error::Parameter(format!("correlation comparison needs n >= 4, got {n}")));
        }
    }
    let (z1, z2) = (r1.atanh(), r2.atanh());
    let se = (1.0 / (n1 as f64 - 3.0) + 1.0 / (n2 as f64 - 3.0)).sqrt();
    let z_stat = (z1 - z2) / se;
    let normal = Normal::standard();
    let p_two_sided = (2.0 * normal.cdf(-z_stat.abs())).min(1.0);
    Ok(FisherComparison { z1, z2, z_stat, p_two_sided })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(duration_s: f64, durs: &[f64]) -> SegmentEvents {
        let mut t = 0.0;
        let events = durs
            .iter()
            .map(|&d| {
                let e = SpindleEvent { onset_s: t, duration_s: d };
                t += d + 0.5;
                e
            })
            .collect();
        SegmentEvents { duration_s, events }
    }

    #[test]
    fn stats_examples() {
        let s = SubjectEvents {
            subject_id: "a".into(),
            cohort: Cohort::Younger,
            segments: vec![seg(115.0, &[1.0; 8]), seg(115.0, &[1.0; 8]), seg(115.0, &[1.0; 7])],
        };
        let st = &subject_stats(&[s]).unwrap()[0];
        assert!((st.density_per_min - 4.0).abs() < 1e-12);
        assert!((st.total_minutes - 5.75).abs() < 1e-12);

        let empty = SubjectEvents { subject_id: "b".into(), cohort: Cohort::Older, segments: vec![seg(60.0, &[])] };
        let st = &subject_stats(&[empty]).unwrap()[0];
        assert_eq!((st.density_per_min, st.mean_duration_s), (0.0, None));

        let two = SubjectEvents { subject_id: "c".into(), cohort: Cohort::Older, segments: vec![seg(60.0, &[0.5, 1.5])] };
        assert_eq!(subject_stats(&[two]).unwrap()[0].mean_duration_s, Some(1.0));

        let none = SubjectEvents { subject_id: "d".into(), cohort: Cohort::Older, segments: vec![] };
        assert!(subject_stats(&[none]).is_err());
    }

    #[test]
    fn correlate_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let c = correlate(&x, &x).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12 && (c.slope - 1.0).abs() < 1e-12 && c.intercept.abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = correlate(&x, &y).unwrap();
        assert!((c.slope - 2.0).abs() < 1e-12 && (c.intercept - 1.0).abs() < 1e-12);

        // Sxy = 4.7, Sxx = 5, Syy = 4.5
        let c = correlate(&x, &[1.1, 1.9, 3.2, 3.8]).unwrap();
        assert!((c.slope - 0.94).abs() < 1e-12);
        assert!((c.r2 - 4.7 * 4.7 / 22.5).abs() < 1e-12);
        assert!((c.intercept - 0.15).abs() < 1e-12);

        assert!(matches!(correlate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation_p_value_against_known_t() {
        // r = 0.5, n = 10: t = 0.5 * sqrt(8 / 0.75) = 1.63299, two-sided p = 0.14111
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let mut best = None;
        // build y with r close to 0.5 by mixing x with an orthogonal pattern
        let z: Vec<f64> = x.iter().map(|v: &f64| if (*v as i32) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for k in 0..2000 {
            let a = k as f64 / 200.0;
            let y: Vec<f64> = x.iter().zip(&z).map(|(p, q)| p + a * q).collect();
            let c = correlate(&x, &y).unwrap();
            if (c.r - 0.5).abs() < 2e-3 {
                best = Some(c);
                break;
            }
        }
        let c = best.expect("mixing sweep reaches r = 0.5");
        let t = c.r * (8.0 / (1.0 - c.r * c.r)).sqrt();
        assert!((t - 1.633).abs() < 0.02);
        assert!((c.p_value - 0.1411).abs() < 0.01);
    }

    /// Standard normal tail by composite Simpson integration of the density.
    fn upper_tail_oracle(z: f64) -> f64 {
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (a, b, n) = (z.abs(), 40.0, 400_000usize);
        let h = (b - a) / n as f64;
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn fisher_examples() {
        let f = compare_correlations(0.5, 20, 0.5, 30).unwrap();
        assert_eq!(f.z_stat, 0.0);
        assert_eq!(f.p_two_sided, 1.0);
        assert_eq!(compare_correlations(0.0, 10, 0.0, 10).unwrap().z1, 0.0);

        let f = compare_correlations(0.906, 18, 0.592, 18).unwrap();
        let z = (0.906f64.atanh() - 0.592f64.atanh()) / (2.0f64 / 15.0).sqrt();
        assert!((f.z_stat - z).abs() < 1e-12);
        assert!((f.p_two_sided - 2.0 * upper_tail_oracle(z)).abs() < 1e-6);
        assert!(f.p_two_sided > 0.02 && f.p_two_sided < 0.05);

        assert!(matches!(compare_correlations(1.0, 10, 0.5, 10), Err(Error::Degenerate(_))));
        assert!(compare_correlations(0.5, 3, 0.5, 10).is_err());
    }

    proptest! {
        #[test]
        fn self_correlation_is_exact(x in proptest::collection::vec(-1e3f64..1e3, 3..40)) {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            prop_assume!(x.iter().any(|v| (v - mean).abs() > 1e-6));
            let c = correlate(&x, &x).unwrap();
            prop_assert!((c.r - 1.0).abs() < 1e-12);
            prop_assert!((c.slope - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_equivariance(
            x in proptest::collection::vec(-100f64..100.0, 3..30),
            noise in proptest::collection::vec(-10f64..10.0, 30),
            a in 0.01f64..100.0,
        ) {
            let y: Vec<f64> = x.iter().zip(&noise).map(|(p, q)| p + q).collect();
            let (Ok(c1), Ok(c2)) = (correlate(&x, &y), correlate(&x, &y.iter().map(|v| a * v).collect::<Vec<_>>())) else {
                return Ok(());
            };
            prop_assert!((c1.r - c2.r).abs() < 1e-9);
            prop_assert!((a * c1.slope - c2.slope).abs() < 1e-9 * (1.0 + (a * c1.slope).abs()));
        }
    }
}
