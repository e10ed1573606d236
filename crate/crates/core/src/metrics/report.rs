//! Dataset-level evaluation of one or more detectors against a reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    compare_correlations, correlate, f1_curve_and_bar, prf, subject_stats, validate_events, Correlation,
    FisherComparison, SegmentEvents, SpindleEvent, SubjectEvents, SubjectStats,
};
use crate::dsp::Cohort;
use crate::error::{Error, Result};

/// Events keyed by segment id; a missing key means no events.
pub type EventSet = BTreeMap<String, Vec<SpindleEvent>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub segment_id: String,
    pub subject_id: String,
    pub cohort: Cohort,
    pub duration_s: f64,
}

#[derive(Clone, Debug)]
pub struct EvalInput<'a> {
    pub segments: &'a [SegmentInfo],
    pub reference: (&'a str, &'a EventSet),
    pub detected: Vec<(&'a str, &'a EventSet)>,
    pub grid: Vec<f64>,
    pub by_subject: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    /// "density" or "duration".
    pub quantity: String,
    /// "all" or a cohort name.
    pub group: String,
    pub result: Option<Correlation>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub name: String,
    pub curve: Vec<ThresholdRow>,
    pub f1_bar: f64,
    pub subjects: Vec<SubjectStats>,
    pub correlations: Vec<CorrelationSummary>,
}

impl DetectorReport {
    pub fn f1_at(&self, threshold: f64) -> Option<f64> {
        self.curve.iter().find(|r| (r.threshold - threshold).abs() < 1e-9).map(|r| r.f1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub quantity: String,
    pub group: String,
    pub first: String,
    pub second: String,
    pub result: Option<FisherComparison>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reference: String,
    pub segment_count: usize,
    pub reference_subjects: Vec<SubjectStats>,
    pub detectors: Vec<DetectorReport>,
    pub comparisons: Vec<ComparisonSummary>,
}

/// Flat per-subject row for CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub source: String,
    pub subject_id: String,
    pub cohort: Cohort,
    pub event_count: usize,
    pub density_per_min: f64,
    pub mean_duration_s: Option<f64>,
    pub total_minutes: f64,
}

/// Flat correlation row for CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub detector: String,
    pub quantity: String,
    pub group: String,
    pub n: Option<usize>,
    pub r: Option<f64>,
    pub r2: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub p_value: Option<f64>,
}

impl EvalReport {
    pub fn threshold_rows(&self) -> Vec<(String, ThresholdRow)> {
        self.detectors.iter().flat_map(|d| d.curve.iter().map(|r| (d.name.clone(), *r))).collect()
    }

    pub fn subject_rows(&self) -> Vec<SubjectRow> {
        let row = |source: &str, s: &SubjectStats| SubjectRow {
            source: source.to_string(),
            subject_id: s.subject_id.clone(),
            cohort: s.cohort,
            event_count: s.event_count,
            density_per_min: s.density_per_min,
            mean_duration_s: s.mean_duration_s,
            total_minutes: s.total_minutes,
        };
        let mut rows: Vec<SubjectRow> = self.reference_subjects.iter().map(|s| row(&self.reference, s)).collect();
        for d in &self.detectors {
            rows.extend(d.subjects.iter().map(|s| row(&d.name, s)));
        }
        rows
    }

    pub fn correlation_rows(&self) -> Vec<CorrelationRow> {
        self.detectors
            .iter()
            .flat_map(|d| {
                d.correlations.iter().map(move |c| CorrelationRow {
                    detector: d.name.clone(),
                    quantity: c.quantity.clone(),
                    group: c.group.clone(),
                    n: c.result.map(|r| r.n),
                    r: c.result.map(|r| r.r),
                    r2: c.result.map(|r| r.r2),
                    slope: c.result.map(|r| r.slope),
                    intercept: c.result.map(|r| r.intercept),
                    p_value: c.result.map(|r| r.p_value),
                })
            })
            .collect()
    }
}

fn group_by_subject(segments: &[SegmentInfo], set: &EventSet) -> Vec<SubjectEvents> {
    let mut by: BTreeMap<&str, SubjectEvents> = BTreeMap::new();
    for s in segments {
        by.entry(&s.subject_id)
            .or_insert_with(|| SubjectEvents { subject_id: s.subject_id.clone(), cohort: s.cohort, segments: vec![] })
            .segments
            .push(SegmentEvents { duration_s: s.duration_s, events: set.get(&s.segment_id).cloned().unwrap_or_default() });
    }
    by.into_values().collect()
}

fn check_set(name: &str, segments: &[SegmentInfo], set: &EventSet) -> Result<()> {
    let known: BTreeMap<&str, f64> = segments.iter().map(|s| (s.segment_id.as_str(), s.duration_s)).collect();
    for (id, events) in set {
        let Some(&dur) = known.get(id.as_str()) else {
            return Err(Error::Validation(format!("event set {name} refers to unknown segment {id}")));
        };
        validate_events(events, Some(dur)).map_err(|e| Error::Validation(format!("{name}/{id}: {e}")))?;
    }
    Ok(())
}

const QUANTITIES: [&str; 2] = ["density", "duration"];

fn quantity(s: &SubjectStats, q: &str) -> Option<f64> {
    match q {
        "density" => Some(s.density_per_min),
        _ => s.mean_duration_s,
    }
}

fn groups(segments: &[SegmentInfo]) -> Vec<(String, Option<Cohort>)> {
    let mut g = vec![("all".to_string(), None)];
    for c in [Cohort::Younger, Cohort::Older] {
        if segments.iter().any(|s| s.cohort == c) {
            g.push((c.to_string(), Some(c)));
        }
    }
    g
}

/// Reference/detector value pairs over subjects where both are defined.
fn paired(reference: &[SubjectStats], detected: &[SubjectStats], q: &str, cohort: Option<Cohort>) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, d) in reference.iter().zip(detected) {
        if cohort.is_some_and(|c| c != r.cohort) {
            continue;
        }
        if let (Some(a), Some(b)) = (quantity(r, q), quantity(d, q)) {
            x.push(a);
            y.push(b);
        }
    }
    (x, y)
}

/// Scores every detected set against the reference.
pub fn evaluate(input: &EvalInput<'_>) -> Result<EvalReport> {
    let (ref_name, ref_set) = input.reference;
    check_set(ref_name, input.segments, ref_set)?;
    let empty = Vec::new();
    let ref_subjects = if input.by_subject { subject_stats(&group_by_subject(input.segments, ref_set))? } else { vec![] };
    let groups = groups(input.segments);

    let mut detectors = Vec::new();
    for (name, set) in &input.detected {
        check_set(name, input.segments, set)?;
        let pairs: Vec<(&[SpindleEvent], &[SpindleEvent])> = input
            .segments
            .iter()
            .map(|s| {
                (
                    ref_set.get(&s.segment_id).unwrap_or(&empty).as_slice(),
                    set.get(&s.segment_id).unwrap_or(&empty).as_slice(),
                )
            })
            .collect();
        let curve = f1_curve_and_bar(&pairs, &input.grid)?;
        let rows = curve
            .thresholds
            .iter()
            .zip(&curve.counts)
            .map(|(&threshold, &c)| {
                let p = prf(c);
                ThresholdRow { threshold, tp: c.tp, fp: c.fp, fn_: c.fn_, precision: p.precision, recall: p.recall, f1: p.f1 }
            })
            .collect();

        let mut subjects = vec![];
        let mut correlations = vec![];
        if input.by_subject {
            subjects = subject_stats(&group_by_subject(input.segments, set))?;
            for q in QUANTITIES {
                for (gname, cohort) in &groups {
                    let (x, y) = paired(&ref_subjects, &subjects, q, *cohort);
                    let (result, note) = match correlate(&x, &y) {
                        Ok(c) => (Some(c), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    correlations.push(CorrelationSummary { quantity: q.into(), group: gname.clone(), result, note });
                }
            }
        }
        detectors.push(DetectorReport { name: name.to_string(), curve: rows, f1_bar: curve.f1_bar, subjects, correlations });
    }

    let mut comparisons = vec![];
    if input.by_subject && detectors.len() >= 2 {
        let (a, b) = (&detectors[0], &detectors[1]);
        for (ca, cb) in a.correlations.iter().zip(&b.correlations) {
            let (result, note) = match (ca.result, cb.result) {
                (Some(x), Some(y)) => match compare_correlations(x.r, x.n, y.r, y.n) {
                    Ok(f) => (Some(f), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                _ => (None, Some("correlation undefined for at least one detector".into())),
            };
            comparisons.push(ComparisonSummary {
                quantity: ca.quantity.clone(),
                group: ca.group.clone(),
                first: a.name.clone(),
                second: b.name.clone(),
                result,
                note,
            });
        }
    }

    Ok(EvalReport {
        reference: ref_name.to_string(),
        segment_count: input.segments.len(),
        reference_subjects: ref_subjects,
        detectors,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::default_grid;

    fn info(seg: &str, subj: &str, cohort: Cohort) -> SegmentInfo {
        SegmentInfo { segment_id: seg.into(), subject_id: subj.into(), cohort, duration_s: 60.0 }
    }

    #[test]
    fn perfect_detector_scores_one() {
        let segments: Vec<SegmentInfo> = (0..5)
            .map(|i| info(&format!("s{i}"), &format!("p{i}"), if i % 2 == 0 { Cohort::Younger } else { Cohort::Older }))
            .collect();
        let mut set = EventSet::new();
        for i in 0..5 {
            let evs = (0..=i).map(|k| SpindleEvent { onset_s: 5.0 * k as f64, duration_s: 0.5 + 0.1 * i as f64 }).collect();
            set.insert(format!("s{i}"), evs);
        }
        let input = EvalInput {
            segments: &segments,
            reference: ("ref", &set),
            detected: vec![("same", &set), ("again", &set)],
            grid: default_grid(),
            by_subject: true,
        };
        let rep = evaluate(&input).unwrap();
        assert_eq!(rep.detectors[0].f1_bar, 1.0);
        let all = rep.detectors[0].correlations.iter().find(|c| c.quantity == "density" && c.group == "all").unwrap();
        assert!((all.result.unwrap().r - 1.0).abs() < 1e-12);
        // three subjects are younger, two older: the older group is too small
        let old = rep.detectors[0].correlations.iter().find(|c| c.group == "older").unwrap();
        assert!(old.result.is_none());
        assert_eq!(rep.comparisons.len(), 6);
        assert_eq!(rep.subject_rows().len(), 15);
    }

    #[test]
    fn unknown_segment_rejected() {
        let segments = vec![info("s0", "p0", Cohort::Younger)];
        let mut set = EventSet::new();
        set.insert("zz".into(), vec![]);
        let input = EvalInput { segments: &segments, reference: ("ref", &set), detected: vec![], grid: default_grid(), by_subject: false };
        assert!(evaluate(&input).is_err());
    }
}
