//! Per-sample probabilities to discrete spindle events.

use crate::error::{Error, Result};
use crate::metrics::SpindleEvent;
use crate::model::{ModelParams, NO_SPINDLE, SPINDLE};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Centered moving average; windows at the edges are truncated to the
/// available samples. Even widths reach one sample further right than left.
pub fn moving_average<T: Scalar>(p: &[T], width: usize) -> Result<Vec<T>> {
    if width == 0 {
        return Err(Error::Parameter("moving-average width must be >= 1".into()));
    }
    let n = p.len();
    let left = (width - 1) / 2;
    let right = width - 1 - left;
    let vals: Vec<f64> = p.iter().map(|v| v.to_f64_lossy()).collect();
    // windows are summed directly so that larger inputs never give smaller
    // outputs through cancellation in a running sum
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(left);
            let hi = (t + right).min(n - 1);
            let s: f64 = vals[lo..=hi].iter().sum();
            T::of(s / (hi - lo + 1) as f64)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExtractOptions {
    /// Drops events shorter than this; off by default.
    pub min_duration_s: Option<f64>,
}

/// Maximal runs of `true` as events at sample rate `fs`.
pub fn runs_to_events(indicator: &[bool], fs: f64) -> Vec<SpindleEvent> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &on) in indicator.iter().chain(std::iter::once(&false)).enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push(SpindleEvent { onset_s: s as f64 / fs, duration_s: (t - s) as f64 / fs });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Smooths both channels, marks samples where the spindle channel is
/// strictly above the no-spindle channel, and joins consecutive marks.
pub fn extract_from_channels<T: Scalar>(
    no_spindle: &[T],
    spindle: &[T],
    width: usize,
    fs: f64,
    opts: &ExtractOptions,
) -> Result<Vec<SpindleEvent>> {
    if no_spindle.len() != spindle.len() {
        return Err(Error::Shape(format!(
            "channel lengths differ: {} vs {}",
            no_spindle.len(),
            spindle.len()
        )));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Parameter(format!("sample rate must be positive, got {fs}")));
    }
    let s0 = moving_average(no_spindle, width)?;
    let s1 = moving_average(spindle, width)?;
    let indicator: Vec<bool> = s1.iter().zip(&s0).map(|(a, b)| a > b).collect();
    let mut events = runs_to_events(&indicator, fs);
    if let Some(min) = opts.min_duration_s {
        events.retain(|e| e.duration_s >= min);
    }
    Ok(events)
}

/// Events from a `[2, T]` (or `[1, 2, T]`) probability tensor.
pub fn extract_events<T: Scalar>(probs: &Tensor<T>, width: usize, fs: f64, opts: &ExtractOptions) -> Result<Vec<SpindleEvent>> {
    let len = match *probs.shape() {
        [2, t] | [1, 2, t] => t,
        _ => {
            return Err(Error::Shape(format!("expected probabilities of shape [2, T], got {:?}", probs.shape())));
        }
    };
    let d = probs.data();
    let ch = |c: usize| &d[c * len..(c + 1) * len];
    extract_from_channels(ch(NO_SPINDLE), ch(SPINDLE), width, fs, opts)
}

/// Runs the network on one z-scored segment and extracts its events, using
/// the model's smoothing width.
pub fn detect<T: Scalar>(model: &ModelParams<T>, signal: &[T], fs: f64, opts: &ExtractOptions) -> Result<Vec<SpindleEvent>> {
    let x = Tensor::new(vec![1, 1, signal.len()], signal.to_vec())?;
    let probs = model.forward_eval(&x)?;
    extract_events(&probs, model.arch.smoothing_width, fs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_examples() {
        let y = moving_average(&[0.0f64, 1.0, 0.0], 3).unwrap();
        assert_eq!(y, vec![0.5, 1.0 / 3.0, 0.5]);
        let x = [0.3f64, -1.0, 2.5, 7.0];
        assert_eq!(moving_average(&x, 1).unwrap(), x.to_vec());
        assert!(moving_average(&[0.7f32; 50], 42).unwrap().iter().all(|v| *v == 0.7));
        assert!(moving_average(&x, 0).is_err());
        // even width: one sample left, two right
        let y = moving_average(&[1.0f64, 2.0, 3.0, 4.0, 5.0], 4).unwrap();
        assert_eq!(y, vec![2.0, 2.5, 3.5, 4.0, 4.5]);
    }

    fn probs(spindle: &[f64]) -> Tensor<f64> {
        let mut data: Vec<f64> = spindle.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(spindle);
        Tensor::new(vec![2, spindle.len()], data).unwrap()
    }

    #[test]
    fn single_plateau() {
        let p: Vec<f64> = (0..1000).map(|t| if (100..200).contains(&t) { 1.0 } else { 0.0 }).collect();
        let ev = extract_events(&probs(&p), 1, 100.0, &ExtractOptions::default()).unwrap();
        assert_eq!(ev, vec![SpindleEvent { onset_s: 1.0, duration_s: 1.0 }]);
    }

    #[test]
    fn ties_are_not_spindles() {
        let ev = extract_events(&probs(&[0.5; 300]), 42, 100.0, &ExtractOptions::default()).unwrap();
        assert!(ev.is_empty());
    }

    /// Scalar reference: explicit window averages compared sample by sample.
    fn reference_indicator(p: &[f64], width: usize) -> Vec<bool> {
        let n = p.len() as isize;
        let left = ((width - 1) / 2) as isize;
        let right = width as isize - 1 - left;
        (0..n)
            .map(|t| {
                let (mut a, mut b, mut k) = (0.0, 0.0, 0.0);
                for u in (t - left)..=(t + right) {
                    if (0..n).contains(&u) {
                        a += p[u as usize];
                        b += 1.0 - p[u as usize];
                        k += 1.0;
                    }
                }
                a / k > b / k
            })
            .collect()
    }

    #[test]
    fn plateaus_with_gap_match_reference() {
        for gap in [10, 20, 30, 41, 42, 43, 60] {
            let mut p = vec![0.1; 400];
            p[100..180].iter_mut().for_each(|v| *v = 0.9);
            p[180 + gap..260 + gap].iter_mut().for_each(|v| *v = 0.9);
            let ev = extract_events(&probs(&p), 42, 100.0, &ExtractOptions::default()).unwrap();
            assert_eq!(ev, runs_to_events(&reference_indicator(&p, 42), 100.0), "gap {gap}");
        }
        // a 20-sample 0.1 gap between 0.9 plateaus is bridged at width 42
        let mut p = vec![0.1; 400];
        p[100..180].iter_mut().for_each(|v| *v = 0.9);
        p[200..280].iter_mut().for_each(|v| *v = 0.9);
        let ev = extract_events(&probs(&p), 42, 100.0, &ExtractOptions::default()).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn min_duration_filter() {
        let mut p = vec![0.0; 500];
        p[10..20].iter_mut().for_each(|v| *v = 1.0);
        p[100..200].iter_mut().for_each(|v| *v = 1.0);
        let opts = ExtractOptions { min_duration_s: Some(0.5) };
        let ev = extract_events(&probs(&p), 1, 100.0, &opts).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(extract_events(&probs(&p), 1, 100.0, &ExtractOptions::default()).unwrap().len(), 2);
    }

    #[test]
    fn bad_shapes() {
        let t = Tensor::<f64>::zeros(&[3, 10]);
        assert!(extract_events(&t, 1, 100.0, &ExtractOptions::default()).is_err());
    }

    fn covered(events: &[SpindleEvent], n: usize, fs: f64) -> Vec<bool> {
        let mut m = vec![false; n];
        for e in events {
            let a = (e.onset_s * fs).round() as usize;
            let b = (e.end_s() * fs).round() as usize;
            m[a..b].iter_mut().for_each(|v| *v = true);
        }
        m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn events_are_disjoint_sorted_and_inside(p in proptest::collection::vec(0.0f64..=1.0, 1..200), width in 1usize..50) {
            let ev = extract_events(&probs(&p), width, 100.0, &ExtractOptions::default()).unwrap();
            let end = p.len() as f64 / 100.0;
            for e in &ev {
                prop_assert!(e.duration_s > 0.0 && e.onset_s >= 0.0 && e.end_s() <= end + 1e-12);
            }
            for w in ev.windows(2) {
                prop_assert!(w[0].end_s() < w[1].onset_s);
            }
        }
    }

    proptest! {
        #[test]
        fn binary_runs_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..300)) {
            let p: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let ev = extract_events(&probs(&p), 1, 100.0, &ExtractOptions::default()).unwrap();
            prop_assert_eq!(covered(&ev, p.len(), 100.0), bits);
        }

        #[test]
        fn raising_spindle_probability_keeps_detections(
            p in proptest::collection::vec(0.0f64..=1.0, 1..200),
            bump in proptest::collection::vec(0.0f64..=1.0, 200),
            width in 1usize..50,
        ) {
            let q: Vec<f64> = p.iter().zip(&bump).map(|(a, b)| a + (1.0 - a) * b).collect();
            let opts = ExtractOptions::default();
            let before = covered(&extract_events(&probs(&p), width, 100.0, &opts).unwrap(), p.len(), 100.0);
            let after = covered(&extract_events(&probs(&q), width, 100.0, &opts).unwrap(), p.len(), 100.0);
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(!b || *a);
            }
        }
    }
}
