use serde::{Deserialize, Serialize};

use super::{overlap, validate_events, SpindleEvent};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub reference: usize,
    pub detected: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub counts: Counts,
    /// True-positive pairs; every overlap exceeds `threshold`, except at
    /// threshold 1 where pairs have overlap exactly 1.
    pub pairs: Vec<MatchedPair>,
    pub threshold: f64,
}

/// Candidate pairs with positive overlap, via a sweep over both sorted lists.
fn overlapping_pairs(reference: &[SpindleEvent], detected: &[SpindleEvent]) -> Vec<MatchedPair> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, r) in reference.iter().enumerate() {
        while start < detected.len() && detected[start].end_s() <= r.onset_s {
            start += 1;
        }
        for (j, d) in detected.iter().enumerate().skip(start) {
            if d.onset_s >= r.end_s() {
                break;
            }
            let ov = overlap(r, d);
            if ov > 0.0 {
                out.push(MatchedPair { reference: i, detected: j, overlap: ov });
            }
        }
    }
    out
}

/// A pair counts when its overlap exceeds the threshold; at threshold 1
/// only exact coincidence (overlap 1) counts.
fn passes(overlap: f64, threshold: f64) -> bool {
    overlap > threshold || overlap >= 1.0
}

/// One-to-one matching of reference to detected events.
///
/// Pairs whose overlap exceeds `threshold` are taken greedily by descending
/// overlap (ties: earlier reference, then earlier detection); augmenting
/// paths then extend the greedy matching to maximum cardinality. Matched
/// references are true positives, the other references false negatives, and
/// unmatched detections false positives.
pub fn match_events(reference: &[SpindleEvent], detected: &[SpindleEvent], threshold: f64) -> Result<MatchResult> {
    validate_events(reference, None)?;
    validate_events(detected, None)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("overlap threshold {threshold} outside [0, 1]")));
    }
    let mut edges: Vec<MatchedPair> = overlapping_pairs(reference, detected)
        .into_iter()
        .filter(|p| passes(p.overlap, threshold))
        .collect();
    edges.sort_by(|a, b| {
        b.overlap
            .total_cmp(&a.overlap)
            .then(a.reference.cmp(&b.reference))
            .then(a.detected.cmp(&b.detected))
    });

    let mut ref_to: Vec<Option<usize>> = vec![None; reference.len()];
    let mut det_to: Vec<Option<usize>> = vec![None; detected.len()];
    for e in &edges {
        if ref_to[e.reference].is_none() && det_to[e.detected].is_none() {
            ref_to[e.reference] = Some(e.detected);
            det_to[e.detected] = Some(e.reference);
        }
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); reference.len()];
    for e in &edges {
        adj[e.reference].push(e.detected);
    }
    for r in 0..reference.len() {
        if ref_to[r].is_none() && !adj[r].is_empty() {
            let mut seen = vec![false; detected.len()];
            augment(r, &adj, &mut seen, &mut ref_to, &mut det_to);
        }
    }

    let pairs: Vec<MatchedPair> = ref_to
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            d.map(|j| MatchedPair { reference: i, detected: j, overlap: overlap(&reference[i], &detected[j]) })
        })
        .collect();
    let tp = pairs.len();
    Ok(MatchResult {
        counts: Counts { tp, fp: detected.len() - tp, fn_: reference.len() - tp },
        pairs,
        threshold,
    })
}

/// Kuhn's augmenting-path step.
fn augment(
    r: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    ref_to: &mut [Option<usize>],
    det_to: &mut [Option<usize>],
) -> bool {
    for &d in &adj[r] {
        if seen[d] {
            continue;
        }
        seen[d] = true;
        let free = match det_to[d] {
            None => true,
            Some(other) => augment(other, adj, seen, ref_to, det_to),
        };
        if free {
            ref_to[r] = Some(d);
            det_to[d] = Some(r);
            return true;
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and `F1 = 2 TP / (2 TP + FP + FN)`.
///
/// Empty denominators: precision is 1 when there are no false negatives
/// either, else 0; recall likewise with false positives; F1 of all-zero
/// counts is 1.
pub fn prf(c: Counts) -> Prf {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = if c.tp + c.fp == 0 { if c.fn_ == 0 { 1.0 } else { 0.0 } } else { tp / (tp + fp) };
    let recall = if c.tp + c.fn_ == 0 { if c.fp == 0 { 1.0 } else { 0.0 } } else { tp / (tp + fn_) };
    let denom = 2.0 * tp + fp + fn_;
    let f1 = if denom == 0.0 { 1.0 } else { 2.0 * tp / denom };
    Prf { precision, recall, f1 }
}

/// Counts summed over segments before any ratio is taken.
pub fn pooled_counts(segments: &[(&[SpindleEvent], &[SpindleEvent])], threshold: f64) -> Result<Counts> {
    let mut total = Counts::default();
    for (r, d) in segments {
        total += match_events(r, d, threshold)?.counts;
    }
    Ok(total)
}

/// Thresholds 0.05, 0.10, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Curve {
    pub thresholds: Vec<f64>,
    pub counts: Vec<Counts>,
    pub f1: Vec<f64>,
    pub f1_bar: f64,
}

/// F1 at every grid threshold (counts pooled over segments) and its
/// trapezoidal integral over `[0, 1]`.
///
/// F1 below the first grid point is taken as its value there; past the
/// last grid point, as the last value.
pub fn f1_curve_and_bar(segments: &[(&[SpindleEvent], &[SpindleEvent])], grid: &[f64]) -> Result<F1Curve> {
    if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("threshold grid must be ascending within (0, 1]".into()));
    }
    let mut counts = Vec::with_capacity(grid.len());
    for &t in grid {
        counts.push(pooled_counts(segments, t)?);
    }
    let f1: Vec<f64> = counts.iter().map(|c| prf(*c).f1).collect();
    let mut bar = grid[0] * f1[0];
    for i in 1..grid.len() {
        bar += 0.5 * (grid[i] - grid[i - 1]) * (f1[i] + f1[i - 1]);
    }
    bar += (1.0 - grid[grid.len() - 1]) * f1[f1.len() - 1];
    Ok(F1Curve { thresholds: grid.to_vec(), counts, f1, f1_bar: bar })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evs(v: &[(f64, f64)]) -> Vec<SpindleEvent> {
        v.iter().map(|&(a, b)| SpindleEvent::new(a, b - a).unwrap()).collect()
    }

    #[test]
    fn match_examples() {
        let r = evs(&[(1.0, 2.0)]);
        let m = match_events(&r, &r, 0.2).unwrap();
        assert_eq!(m.counts, Counts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(match_events(&r, &[], 0.5).unwrap().counts, Counts { tp: 0, fp: 0, fn_: 1 });

        let r = evs(&[(0.0, 1.0), (2.0, 3.0)]);
        let d = evs(&[(0.5, 1.5), (10.0, 11.0)]);
        let m = match_events(&r, &d, 0.2).unwrap();
        assert_eq!(m.counts, Counts { tp: 1, fp: 1, fn_: 1 });
        assert!((m.pairs[0].overlap - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn augmentation_beats_pure_greedy() {
        // greedy alone pairs the wide detection with the first reference
        // and strands both the short detection and the second reference
        let r = evs(&[(0.0, 1.0), (1.1, 1.3)]);
        let d = evs(&[(0.0, 0.15), (0.2, 1.3)]);
        let m = match_events(&r, &d, 0.1).unwrap();
        assert_eq!(m.counts.tp, 2);
        assert!(m.pairs.iter().all(|p| p.overlap > 0.1));
    }

    #[test]
    fn overlapping_input_rejected() {
        let bad = vec![SpindleEvent { onset_s: 0.0, duration_s: 2.0 }, SpindleEvent { onset_s: 1.0, duration_s: 2.0 }];
        assert!(matches!(match_events(&bad, &[], 0.2), Err(Error::Validation(_))));
    }

    #[test]
    fn prf_examples() {
        let p = prf(Counts { tp: 3, fp: 1, fn_: 1 });
        assert_eq!((p.precision, p.recall, p.f1), (0.75, 0.75, 0.75));
        let p = prf(Counts::default());
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = prf(Counts { tp: 73, fp: 30, fn_: 25 });
        assert!((p.f1 - 146.0 / 201.0).abs() < 1e-15);
        assert!((p.f1 - 0.7264).abs() < 1e-4);
        let p = prf(Counts { tp: 0, fp: 0, fn_: 4 });
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn curve_examples() {
        let r = evs(&[(0.0, 1.0), (3.0, 4.5)]);
        let c = f1_curve_and_bar(&[(&r, &r)], &default_grid()).unwrap();
        assert!(c.f1.iter().all(|v| *v == 1.0));
        assert!((c.f1_bar - 1.0).abs() < 1e-12);

        let c = f1_curve_and_bar(&[(&r, &[])], &default_grid()).unwrap();
        assert!(c.f1.iter().all(|v| *v == 0.0));
        assert_eq!(c.f1_bar, 0.0);

        let r = evs(&[(0.0, 1.0)]);
        let d = evs(&[(0.0, 0.5)]);
        let c = f1_curve_and_bar(&[(&r, &d)], &default_grid()).unwrap();
        for (t, f) in c.thresholds.iter().zip(&c.f1) {
            assert_eq!(*f, if *t < 0.5 { 1.0 } else { 0.0 });
        }
        // step at 0.5: 0.45 of full F1 plus half a grid cell
        assert!((c.f1_bar - 0.475).abs() < 1e-12);
        assert!((c.f1_bar - 0.5).abs() <= 0.05);
    }

    #[test]
    fn grid_validation() {
        assert!(f1_curve_and_bar(&[], &[0.0, 0.5]).is_err());
        assert!(f1_curve_and_bar(&[], &[0.5, 0.2]).is_err());
        assert!(f1_curve_and_bar(&[], &[]).is_err());
    }
}
