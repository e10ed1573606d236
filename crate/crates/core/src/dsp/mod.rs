//! Signal preprocessing: band-pass filtering, resampling and per-segment
//! standardization.

mod butterworth;
mod resample;

pub use butterworth::{design_bandpass, filtfilt, Biquad, BiquadCascade, STABILITY_MARGIN};
pub use resample::{rational_ratio, resample_to, PolyphaseKernel, TAPS_PER_PHASE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sampling rate the network operates at.
pub const TARGET_FS: f64 = 100.0;

/// Standard deviation below which a segment is treated as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Younger,
    Older,
}

impl std::fmt::Display for Cohort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Cohort::Younger => "younger",
            Cohort::Older => "older",
        })
    }
}

/// A recorded EEG segment at its native rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSegment {
    pub samples: Vec<f32>,
    pub sample_rate_hz: f64,
    pub subject_id: String,
    pub cohort: Cohort,
    pub segment_id: String,
}

impl RawSegment {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Validation(format!(
                "segment {}: sample rate must be positive",
                self.segment_id
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::Validation(format!("segment {} has no samples", self.segment_id)));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "segment {}: sample {i} is not finite",
                self.segment_id
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// A z-scored 100 Hz segment, ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub samples: Vec<f32>,
    pub subject_id: String,
    pub cohort: Cohort,
    pub segment_id: String,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / TARGET_FS
    }
}

/// Output of [`zscore`]; `degenerate` flags a constant input.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardized<T> {
    pub values: Vec<T>,
    pub degenerate: bool,
}

/// Zero mean, unit population standard deviation.
///
/// Constant inputs map to zeros with `degenerate` set.
pub fn zscore<T: Scalar>(x: &[T]) -> Result<Standardized<T>> {
    if x.len() < 2 {
        return Err(Error::Parameter(format!("zscore needs at least 2 samples, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let var = x.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok(Standardized { values: vec![T::zero(); x.len()], degenerate: true });
    }
    let values = x.iter().map(|v| T::of((v.to_f64_lossy() - mean) / std)).collect();
    Ok(Standardized { values, degenerate: false })
}

/// The preprocessing chain: zero-phase band-pass at the native rate,
/// resampling to [`TARGET_FS`], then z-scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocessor {
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub target_fs: f64,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self { order: 10, low_hz: 0.3, high_hz: 30.0, target_fs: TARGET_FS }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub segment: Segment,
    /// Set when the filtered segment was constant.
    pub degenerate: bool,
}

impl Preprocessor {
    pub fn run(&self, raw: &RawSegment) -> Result<Preprocessed> {
        raw.validate()?;
        let filter = design_bandpass(self.order, self.low_hz, self.high_hz, raw.sample_rate_hz)?;
        let filtered = filtfilt(&filter, &raw.samples)?;
        let resampled = resample_to(&filtered, raw.sample_rate_hz, self.target_fs)?;
        let z = zscore(&resampled)?;
        if z.degenerate {
            log::warn!("segment {} is constant after filtering", raw.segment_id);
        }
        Ok(Preprocessed {
            segment: Segment {
                samples: z.values,
                subject_id: raw.subject_id.clone(),
                cohort: raw.cohort,
                segment_id: raw.segment_id.clone(),
            },
            degenerate: z.degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zscore_hand_values() {
        let z = zscore(&[1.0f64, 2.0, 3.0]).unwrap();
        let s = (1.5f64).sqrt();
        assert!(!z.degenerate);
        for (got, want) in z.values.iter().zip([-s, 0.0, s]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_is_flagged() {
        let z = zscore(&[5.0f32, 5.0, 5.0]).unwrap();
        assert!(z.degenerate);
        assert_eq!(z.values, vec![0.0; 3]);
        assert!(zscore(&[1.0f64]).is_err());
    }

    #[test]
    fn zscore_is_affine_invariant() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 - 3.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 10.0 * v + 3.0).collect();
        let (zx, zy) = (zscore(&x).unwrap(), zscore(&y).unwrap());
        for (a, b) in zx.values.iter().zip(&zy.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean = zx.values.iter().sum::<f64>() / 100.0;
        let var = zx.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn canonical_segment_length() {
        let fs = 256.0;
        let samples: Vec<f32> = (0..(115.0 * fs) as usize)
            .map(|i| {
                let t = i as f64 / fs;
                ((2.0 * PI * 12.0 * t).sin() + 0.5 * (2.0 * PI * 3.0 * t).sin()) as f32
            })
            .collect();
        let raw = RawSegment {
            samples,
            sample_rate_hz: fs,
            subject_id: "s".into(),
            cohort: Cohort::Older,
            segment_id: "seg".into(),
        };
        let out = Preprocessor::default().run(&raw).unwrap();
        assert_eq!(out.segment.samples.len(), 11500);
        let n = 11500.0;
        let mean = out.segment.samples.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var = out.segment.samples.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn raw_segment_validation() {
        let mut raw = RawSegment {
            samples: vec![0.0, f32::NAN],
            sample_rate_hz: 100.0,
            subject_id: "s".into(),
            cohort: Cohort::Younger,
            segment_id: "x".into(),
        };
        assert!(raw.validate().is_err());
        raw.samples = vec![];
        assert!(raw.validate().is_err());
        raw.samples = vec![1.0];
        raw.sample_rate_hz = 0.0;
        assert!(raw.validate().is_err());
    }
}
