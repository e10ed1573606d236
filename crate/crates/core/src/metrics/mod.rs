//! By-event and by-subject evaluation of spindle detections.

mod matching;
pub mod report;
mod subject;

pub use matching::{
    default_grid, f1_curve_and_bar, match_events, pooled_counts, prf, Counts, F1Curve, MatchResult,
    MatchedPair, Prf,
};
pub use report::{evaluate, DetectorReport, EvalInput, EvalReport, EventSet, SegmentInfo};
pub use subject::{
    compare_correlations, correlate, subject_stats, Correlation, FisherComparison, SegmentEvents,
    SubjectEvents, SubjectStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One spindle, in seconds from the segment start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpindleEvent {
    pub onset_s: f64,
    pub duration_s: f64,
}

impl SpindleEvent {
    pub fn new(onset_s: f64, duration_s: f64) -> Result<Self> {
        let ev = Self { onset_s, duration_s };
        ev.validate()?;
        Ok(ev)
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset_s.is_finite() && self.duration_s.is_finite()) {
            return Err(Error::Validation(format!("non-finite event {self:?}")));
        }
        if self.onset_s < 0.0 || self.duration_s <= 0.0 {
            return Err(Error::Validation(format!(
                "event needs onset >= 0 and duration > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Checks events are valid, sorted by onset and pairwise non-overlapping,
/// and, with `segment_s`, that they end inside the segment.
pub fn validate_events(events: &[SpindleEvent], segment_s: Option<f64>) -> Result<()> {
    for ev in events {
        ev.validate()?;
    }
    for w in events.windows(2) {
        if w[1].onset_s < w[0].end_s() {
            return Err(Error::Validation(format!(
                "events overlap or are unsorted: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    if let (Some(limit), Some(last)) = (segment_s, events.last()) {
        if last.end_s() > limit + 1e-9 {
            return Err(Error::Validation(format!(
                "event {last:?} ends after the segment ({limit} s)"
            )));
        }
    }
    Ok(())
}

/// Intersection over union of the two intervals.
pub fn overlap(a: &SpindleEvent, b: &SpindleEvent) -> f64 {
    let inter = (a.end_s().min(b.end_s()) - a.onset_s.max(b.onset_s)).max(0.0);
    if inter <= 0.0 {
        return 0.0;
    }
    // overlapping intervals: the union is one contiguous span
    let union = a.end_s().max(b.end_s()) - a.onset_s.min(b.onset_s);
    (inter / union).clamp(0.0, 1.0)
}
