//! Synthetic EEG: 1/f background with Hann-windowed sigma-band bursts at
//! known positions, plus simulated rater noise on the annotations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::zscore;
use crate::error::{Error, Result};
use crate::metrics::SpindleEvent;

/// Shortest background that [`gen_background`] accepts.
pub const MIN_BACKGROUND_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    /// Power falls off as `1 / f^pink_exponent`.
    pub pink_exponent: f64,
    pub rms: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self { pink_exponent: 1.0, rms: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpindleConfig {
    pub rate_per_min: f64,
    /// Per-subject rates are drawn uniformly from
    /// `rate_per_min +- rate_spread_per_min` by the dataset generator.
    pub rate_spread_per_min: f64,
    pub freq_hz: [f64; 2],
    pub duration_s: [f64; 2],
    /// Spindle RMS over its window divided by the background RMS.
    pub snr: f64,
    /// Minimum gap between consecutive events.
    pub separation_s: f64,
}

impl Default for SpindleConfig {
    fn default() -> Self {
        Self {
            rate_per_min: 4.0,
            rate_spread_per_min: 0.0,
            freq_hz: [11.0, 16.0],
            duration_s: [0.5, 2.0],
            snr: 6.0,
            separation_s: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub onset_sd_s: f64,
    pub miss_prob: f64,
    pub false_rate_per_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub fs: f64,
    pub segment_s: f64,
    pub background: BackgroundConfig,
    pub spindle: SpindleConfig,
    pub jitter: JitterConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: 100.0,
            segment_s: 115.0,
            background: BackgroundConfig::default(),
            spindle: SpindleConfig::default(),
            jitter: JitterConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return bad(format!("fs must be positive, got {}", self.fs));
        }
        if !(self.segment_s.is_finite() && self.segment_s * self.fs >= MIN_BACKGROUND_LEN as f64) {
            return bad(format!("segment of {} s is shorter than {MIN_BACKGROUND_LEN} samples", self.segment_s));
        }
        let b = &self.background;
        if !(b.pink_exponent.is_finite() && b.rms.is_finite() && b.rms > 0.0) {
            return bad("background needs a finite exponent and positive rms".into());
        }
        let s = &self.spindle;
        let [f0, f1] = s.freq_hz;
        if !(11.0..=16.0).contains(&f0) || !(11.0..=16.0).contains(&f1) || f0 > f1 {
            return bad(format!("spindle frequencies must lie within 11-16 Hz, got {f0}-{f1}"));
        }
        if f1 >= self.fs / 2.0 {
            return bad(format!("spindle frequency {f1} Hz is not below Nyquist at {} Hz", self.fs));
        }
        let [d0, d1] = s.duration_s;
        if !(d0 >= 0.5 && d0 <= d1 && d1.is_finite()) {
            return bad(format!("spindle durations need 0.5 <= min <= max, got {d0}-{d1}"));
        }
        if !(s.snr.is_finite() && s.snr >= 0.0 && s.separation_s.is_finite() && s.separation_s >= 0.0) {
            return bad("snr and separation must be finite and non-negative".into());
        }
        if !(s.rate_per_min.is_finite() && s.rate_spread_per_min.is_finite())
            || s.rate_spread_per_min < 0.0
            || s.rate_per_min - s.rate_spread_per_min < 0.0
        {
            return bad(format!(
                "spindle rate {} +- {} per minute must stay non-negative",
                s.rate_per_min, s.rate_spread_per_min
            ));
        }
        let occupancy = (s.rate_per_min + s.rate_spread_per_min) * (d1 + s.separation_s) / 60.0;
        if occupancy >= 1.0 {
            return bad(format!(
                "spindle rate {} per minute cannot fit events of up to {d1} s with {} s separation",
                s.rate_per_min + s.rate_spread_per_min,
                s.separation_s
            ));
        }
        let j = &self.jitter;
        if !(j.onset_sd_s.is_finite() && j.onset_sd_s >= 0.0 && (0.0..=1.0).contains(&j.miss_prob))
            || !(j.false_rate_per_min.is_finite() && j.false_rate_per_min >= 0.0)
        {
            return bad("jitter needs sd >= 0, miss_prob in [0, 1] and a non-negative false rate".into());
        }
        Ok(())
    }

    pub fn samples_per_segment(&self) -> usize {
        (self.segment_s * self.fs).round() as usize
    }
}

/// Gaussian noise shaped to a `1 / f^exponent` power spectrum in the
/// frequency domain, then centered and scaled to the configured RMS.
pub fn gen_background(cfg: &BackgroundConfig, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    background_from(cfg, n, &mut rng)
}

fn background_from(cfg: &BackgroundConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if n < MIN_BACKGROUND_LEN {
        return Err(Error::Parameter(format!("background needs at least {MIN_BACKGROUND_LEN} samples, got {n}")));
    }
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(StandardNormal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let bin = k.min(n - k) as f64;
        buf[k] *= bin.powf(-cfg.pink_exponent / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let rms = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for v in &mut x {
        *v = (*v - mean) / rms * cfg.rms;
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSegment {
    /// Z-scored samples at `fs`.
    pub samples: Vec<f32>,
    pub fs: f64,
    pub truth: Vec<SpindleEvent>,
}

/// Unit-RMS Hann-enveloped sine of `len` samples.
fn burst(len: usize, freq_hz: f64, phase: f64, fs: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..len)
        .map(|k| {
            let env = 0.5 * (1.0 - (2.0 * PI * (k as f64 + 0.5) / len as f64).cos());
            env * (2.0 * PI * freq_hz * k as f64 / fs + phase).sin()
        })
        .collect();
    let rms = (w.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    w.into_iter().map(|v| v / rms).collect()
}

/// Event positions in samples: `count` events with the given lengths,
/// uniformly spread with at least `sep` samples between them. Events are
/// dropped from the end while they cannot fit.
fn place(lengths: &mut Vec<usize>, sep: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let used: usize = lengths.iter().sum::<usize>() + sep * lengths.len().saturating_sub(1);
        if used <= n {
            let slack = n - used;
            let mut offsets: Vec<usize> = (0..lengths.len()).map(|_| rng.random_range(0..=slack)).collect();
            offsets.sort_unstable();
            let mut cursor = 0;
            return offsets
                .iter()
                .zip(lengths.iter())
                .map(|(&o, &len)| {
                    let onset = o + cursor;
                    cursor += len + sep;
                    onset
                })
                .collect();
        }
        lengths.pop();
    }
}

/// One synthetic segment at the configured rate.
pub fn gen_segment(cfg: &SynthConfig, seed: u64) -> Result<SynthSegment> {
    gen_segment_at_rate(cfg, cfg.spindle.rate_per_min, seed)
}

/// One synthetic segment with spindles at `rate_per_min`.
///
/// The event count is Poisson with mean `rate * duration`; durations are
/// uniform within the configured bounds and snapped to whole samples.
pub fn gen_segment_at_rate(cfg: &SynthConfig, rate_per_min: f64, seed: u64) -> Result<SynthSegment> {
    cfg.validate()?;
    let s = &cfg.spindle;
    if !(rate_per_min.is_finite() && rate_per_min >= 0.0)
        || rate_per_min * (s.duration_s[1] + s.separation_s) / 60.0 >= 1.0
    {
        return Err(Error::Config(format!("spindle rate {rate_per_min} per minute is not achievable")));
    }
    let fs = cfg.fs;
    let n = cfg.samples_per_segment();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = background_from(&cfg.background, n, &mut rng)?;

    let mean_count = rate_per_min * n as f64 / fs / 60.0;
    let count = if mean_count > 0.0 {
        Poisson::new(mean_count).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
    } else {
        0
    };
    let min_len = (s.duration_s[0] * fs).ceil() as usize;
    let max_len = ((s.duration_s[1] * fs).floor() as usize).max(min_len);
    let mut lengths: Vec<usize> = (0..count).map(|_| rng.random_range(min_len..=max_len)).collect();
    let sep = (s.separation_s * fs).ceil() as usize;
    let onsets = place(&mut lengths, sep, n, &mut rng);

    let mut truth = Vec::with_capacity(onsets.len());
    for (&onset, &len) in onsets.iter().zip(&lengths) {
        let freq = rng.random_range(s.freq_hz[0]..=s.freq_hz[1]);
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = s.snr * cfg.background.rms;
        for (k, v) in burst(len, freq, phase, fs).into_iter().enumerate() {
            x[onset + k] += amp * v;
        }
        truth.push(SpindleEvent { onset_s: onset as f64 / fs, duration_s: len as f64 / fs });
    }
    let samples = zscore(&x)?.values.into_iter().map(|v| v as f32).collect();
    Ok(SynthSegment { samples, fs, truth })
}

/// Simulated rater: drops, shifts and invents events.
///
/// Kept events get independent Gaussian onset and offset shifts and a
/// duration of at least 0.3 s; false events avoid the truth intervals.
/// The result is sorted with overlapping events merged, and stays inside
/// `[0, segment_s]`. All-zero jitter returns `truth` unchanged.
pub fn jitter_annotations(truth: &[SpindleEvent], jitter: &JitterConfig, segment_s: f64, seed: u64) -> Result<Vec<SpindleEvent>> {
    crate::metrics::validate_events(truth, Some(segment_s))?;
    if jitter.onset_sd_s == 0.0 && jitter.miss_prob == 0.0 && jitter.false_rate_per_min == 0.0 {
        return Ok(truth.to_vec());
    }
    if !(jitter.onset_sd_s >= 0.0 && (0.0..=1.0).contains(&jitter.miss_prob) && jitter.false_rate_per_min >= 0.0) {
        return Err(Error::Config("invalid jitter parameters".into()));
    }
    const MIN_DURATION: f64 = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = Normal::new(0.0, jitter.onset_sd_s).map_err(|e| Error::Config(e.to_string()))?;
    let fit = |onset: f64, end: f64| -> SpindleEvent {
        let dur = (end - onset).max(MIN_DURATION).min(segment_s);
        let onset = onset.clamp(0.0, segment_s - dur);
        SpindleEvent { onset_s: onset, duration_s: dur }
    };
    let mut out = Vec::with_capacity(truth.len());
    for ev in truth {
        if rng.random_bool(jitter.miss_prob) {
            continue;
        }
        let (mut a, mut b) = (ev.onset_s, ev.end_s());
        if jitter.onset_sd_s > 0.0 {
            a += shift.sample(&mut rng);
            b += shift.sample(&mut rng);
        }
        out.push(fit(a, b));
    }
    let mean_false = jitter.false_rate_per_min * segment_s / 60.0;
    if mean_false > 0.0 {
        let n_false = Poisson::new(mean_false).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize;
        for _ in 0..n_false {
            for _attempt in 0..100 {
                let dur = rng.random_range(0.5..=2.0f64).min(segment_s);
                let onset = rng.random_range(0.0..=segment_s - dur);
                let cand = SpindleEvent { onset_s: onset, duration_s: dur };
                if truth.iter().all(|t| cand.end_s() <= t.onset_s || cand.onset_s >= t.end_s()) {
                    out.push(cand);
                    break;
                }
            }
        }
    }
    out.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    let mut merged: Vec<SpindleEvent> = Vec::with_capacity(out.len());
    for ev in out {
        match merged.last_mut() {
            Some(last) if ev.onset_s <= last.end_s() => {
                let end = last.end_s().max(ev.end_s());
                last.duration_s = end - last.onset_s;
            }
            _ => merged.push(ev),
        }
    }
    Ok(merged)
}
