//! Butterworth band-pass design as cascaded biquads, plus zero-phase
//! forward-backward filtering.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One second-order section, `a0` normalized to 1.
///
/// `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Transfer function evaluated at `z^-1 = zinv`.
    pub fn eval(&self, zinv: Complex64) -> Complex64 {
        let num = self.b[0] + zinv * (self.b[1] + zinv * self.b[2]);
        let den = 1.0 + zinv * (self.a[0] + zinv * self.a[1]);
        num / den
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Gain for a constant input.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Cascade of second-order sections with its design metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub passband_hz: (f64, f64),
    pub sample_rate_hz: f64,
}

/// Margin by which every pole must lie inside the unit circle.
pub const STABILITY_MARGIN: f64 = 1e-12;

/// Designs a Butterworth band-pass of total order `order` (two poles per
/// section, `order / 2` sections).
///
/// Band edges are pre-warped so the bilinear transform places the -3 dB
/// points exactly at `low_hz` and `high_hz`. Each section is scaled to unit
/// gain at the digital centre frequency.
pub fn design_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<BiquadCascade> {
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::Parameter(format!("band-pass order must be even and >= 2, got {order}")));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Parameter(format!("sample rate must be positive, got {fs}")));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::Parameter(format!(
            "band edges must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} at {fs} Hz"
        )));
    }
    let n = order / 2;
    let fs2 = 2.0 * fs;
    let w_low = fs2 * (PI * low_hz / fs).tan();
    let w_high = fs2 * (PI * high_hz / fs).tan();
    let bw = w_high - w_low;
    let w0 = (w_low * w_high).sqrt();

    let mut digital = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let half = proto * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            digital.push((fs2 + s) / (fs2 - s));
        }
    }

    let scale = digital.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let mut sections = Vec::with_capacity(n);
    let mut reals: Vec<f64> = Vec::new();
    for z in &digital {
        if z.im > tol {
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] });
        } else if z.im.abs() <= tol {
            reals.push(z.re);
        }
    }
    reals.sort_by(f64::total_cmp);
    for pair in reals.chunks(2) {
        let [r1, r2] = [pair[0], pair.get(1).copied().unwrap_or(0.0)];
        sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-(r1 + r2), r1 * r2] });
    }
    if sections.len() != n {
        return Err(Error::Numerical(format!(
            "pole pairing produced {} sections, expected {n}",
            sections.len()
        )));
    }

    let centre_hz = fs / PI * (w0 / fs2).atan();
    let zinv = Complex64::from_polar(1.0, -2.0 * PI * centre_hz / fs);
    for sec in &mut sections {
        let g = 1.0 / sec.eval(zinv).norm();
        for b in &mut sec.b {
            *b *= g;
        }
    }

    let cascade = BiquadCascade {
        sections,
        order,
        passband_hz: (low_hz, high_hz),
        sample_rate_hz: fs,
    };
    if !cascade.is_stable() {
        return Err(Error::Numerical("designed filter is not stable".into()));
    }
    Ok(cascade)
}

impl BiquadCascade {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.sample_rate_hz);
        self.sections.iter().map(|s| s.eval(zinv)).product()
    }

    pub fn magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    /// Magnitude of the forward-backward response applied by [`filtfilt`],
    /// `|H(f)|^2`.
    pub fn zero_phase_magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm_sqr()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0 - STABILITY_MARGIN)
    }

    /// Samples of odd-reflection padding added on each side by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.order)
    }

    /// Single causal pass starting from rest.
    pub fn filter<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut y: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
        self.run(&mut y, None);
        y.into_iter().map(T::of).collect()
    }

    /// Runs the cascade in place. With `steady`, each section's state starts
    /// at the steady state for a constant input equal to `steady`.
    fn run(&self, y: &mut [f64], steady: Option<f64>) {
        let mut level = steady.unwrap_or(0.0);
        for sec in &self.sections {
            let [b0, b1, b2] = sec.b;
            let [a1, a2] = sec.a;
            let g = sec.dc_gain();
            let (mut s1, mut s2) = if steady.is_some() {
                let s2 = (b2 - a2 * g) * level;
                ((b1 - a1 * g) * level + s2, s2)
            } else {
                (0.0, 0.0)
            };
            level *= g;
            for v in y.iter_mut() {
                let x = *v;
                let out = b0 * x + s1;
                s1 = b1 * x - a1 * out + s2;
                s2 = b2 * x - a2 * out;
                *v = out;
            }
        }
    }
}

/// Zero-phase filtering: forward pass, then a pass over the time-reversed
/// result. The effective magnitude response is `|H|^2`.
///
/// Ends are extended by odd-symmetric reflection of [`BiquadCascade::pad_len`]
/// samples, and each pass starts from the steady state of its first sample.
pub fn filtfilt<T: Scalar>(filter: &BiquadCascade, x: &[T]) -> Result<Vec<T>> {
    let pad = filter.pad_len();
    let n = x.len();
    if n <= pad {
        return Err(Error::SignalLength { len: n, min: pad });
    }
    let xs: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
    let (first, last) = (xs[0], xs[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - xs[i]));
    ext.extend_from_slice(&xs);
    ext.extend((1..=pad).map(|i| 2.0 * last - xs[n - 1 - i]));

    let start = ext[0];
    filter.run(&mut ext, Some(start));
    ext.reverse();
    let start = ext[0];
    filter.run(&mut ext, Some(start));
    ext.reverse();

    Ok(ext[pad..pad + n].iter().map(|&v| T::of(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analog Butterworth band-pass magnitude after bilinear warping.
    fn analytic_magnitude(order: usize, lo: f64, hi: f64, fs: f64, f: f64) -> f64 {
        let n = (order / 2) as i32;
        let warp = |v: f64| 2.0 * fs * (PI * v / fs).tan();
        let (wl, wh, w) = (warp(lo), warp(hi), warp(f));
        let q = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + q.powi(2 * n)).sqrt()
    }

    /// Expands the cascade into one numerator/denominator polynomial and
    /// evaluates it with Horner's rule.
    fn polynomial_magnitude(c: &BiquadCascade, f: f64) -> f64 {
        let mul = |p: &[f64], q: &[f64]| {
            let mut out = vec![0.0; p.len() + q.len() - 1];
            for (i, a) in p.iter().enumerate() {
                for (j, b) in q.iter().enumerate() {
                    out[i + j] += a * b;
                }
            }
            out
        };
        let mut num = vec![1.0];
        let mut den = vec![1.0];
        for s in &c.sections {
            num = mul(&num, &s.b);
            den = mul(&den, &[1.0, s.a[0], s.a[1]]);
        }
        let zinv = Complex64::from_polar(1.0, -2.0 * PI * f / c.sample_rate_hz);
        let horner = |p: &[f64]| p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * zinv + v);
        (horner(&num) / horner(&den)).norm()
    }

    #[test]
    fn eeg_band_design_matches_analytic_response() {
        let c = design_bandpass(10, 0.3, 30.0, 256.0).unwrap();
        assert_eq!(c.sections.len(), 5);
        assert!(c.is_stable());
        let m15 = c.magnitude(15.0);
        assert!((0.99..=1.01).contains(&m15), "{m15}");
        // one pass of five sections only reaches about -37.5 dB at 60 Hz
        assert!((c.magnitude(60.0) - 0.01337).abs() < 1e-4, "{}", c.magnitude(60.0));
        assert!((0.99..=1.01).contains(&c.zero_phase_magnitude(15.0)));
        assert!(c.zero_phase_magnitude(60.0) < 0.01);
        assert!(polynomial_magnitude(&c, 60.0).powi(2) < 0.01);
        for i in 1..128 {
            let f = i as f64;
            let want = analytic_magnitude(10, 0.3, 30.0, 256.0, f);
            assert!((c.magnitude(f) - want).abs() < 1e-9, "f={f}");
            // the expanded polynomial is ill-conditioned next to the low edge
            let tol = if f < 3.0 { 1e-5 } else { 1e-8 };
            assert!((polynomial_magnitude(&c, f) - want).abs() < tol, "f={f}");
        }
    }

    #[test]
    fn second_order_minus_3db_points() {
        let c = design_bandpass(2, 10.0, 20.0, 100.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.magnitude(10.0) / r - 1.0).abs() < 0.01);
        assert!((c.magnitude(20.0) / r - 1.0).abs() < 0.01);
        // centre gain is exactly one and real
        let centre = 100.0 / PI * ((200.0 * (PI * 0.1).tan() * 200.0 * (PI * 0.2).tan()).sqrt() / 200.0).atan();
        let h = c.response(centre);
        assert!((h.re - 1.0).abs() < 1e-12 && h.im.abs() < 1e-12);
        let peak = (1..1000)
            .map(|i| i as f64 * 0.05)
            .max_by(|a, b| c.magnitude(*a).total_cmp(&c.magnitude(*b)))
            .unwrap();
        assert!((peak - centre).abs() < 0.05);
        // the geometric mean of the analog edges lands at the digital peak
        assert!(c.magnitude((10.0f64 * 20.0).sqrt()) > 0.99);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(design_bandpass(3, 1.0, 2.0, 100.0), Err(Error::Parameter(_))));
        assert!(matches!(design_bandpass(0, 1.0, 2.0, 100.0), Err(Error::Parameter(_))));
        assert!(design_bandpass(4, 2.0, 1.0, 100.0).is_err());
        assert!(design_bandpass(4, 0.0, 1.0, 100.0).is_err());
        assert!(design_bandpass(4, 1.0, 50.0, 100.0).is_err());
    }

    #[test]
    fn zeros_stay_zero() {
        let c = design_bandpass(10, 0.3, 30.0, 256.0).unwrap();
        let y = filtfilt(&c, &vec![0.0f64; 1000]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_signal_is_rejected() {
        let c = design_bandpass(10, 0.3, 30.0, 256.0).unwrap();
        assert!(matches!(filtfilt(&c, &[1.0f64; 60]), Err(Error::SignalLength { .. })));
        assert!(filtfilt(&c, &[1.0f64; 61]).is_ok());
    }
}
