//! Rational polyphase resampling with a windowed-sinc anti-alias kernel.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Kernel taps per polyphase branch.
pub const TAPS_PER_PHASE: usize = 64;

/// Anti-alias cutoff as a fraction of the output Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.9;

/// Best rational approximation `up / down` of `ratio` with `down <= max_den`.
pub fn rational_ratio(ratio: f64, max_den: u64) -> (u64, u64) {
    // continued-fraction convergents
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut x = ratio;
    loop {
        let a = x.floor();
        let a_int = a as u64;
        let (h2, k2) = (a_int * h1 + h0, a_int * k1 + k0);
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = x - a;
        if frac < 1e-12 || ((h1 as f64 / k1 as f64) - ratio).abs() < 1e-12 * ratio {
            break;
        }
        x = 1.0 / frac;
    }
    let g = gcd(h1, k1);
    (h1 / g, k1 / g)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a.max(1) } else { gcd(b, a % b) }
}

/// Polyphase kernel for upsampling by `up` then decimating by `down`.
///
/// Branch `r` holds taps `r, r + up, r + 2 up, ...`, each branch normalized
/// to unit DC gain.
#[derive(Clone, Debug)]
pub struct PolyphaseKernel {
    up: usize,
    down: usize,
    half: usize,
    taps: Vec<f64>,
}

impl PolyphaseKernel {
    pub fn new(up: usize, down: usize) -> Self {
        let half = TAPS_PER_PHASE / 2 * up;
        let len = 2 * half + 1;
        // cutoff in cycles per upsampled sample
        let fc = CUTOFF_FRACTION * 0.5 / up.max(down) as f64;
        let mut taps: Vec<f64> = (0..len)
            .map(|j| {
                let t = j as f64 - half as f64;
                let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
                let w = 2.0 * PI * j as f64 / (len - 1) as f64;
                let blackman = 0.42 - 0.5 * w.cos() + 0.08 * (2.0 * w).cos();
                sinc * blackman
            })
            .collect();
        for phase in 0..up {
            let sum: f64 = taps.iter().skip(phase).step_by(up).sum();
            if sum != 0.0 {
                taps.iter_mut().skip(phase).step_by(up).for_each(|t| *t /= sum);
            }
        }
        Self { up, down, half, taps }
    }

    fn apply(&self, x: &[f64], out_len: usize) -> Vec<f64> {
        let n = x.len() as i64;
        let (up, len) = (self.up as i64, self.taps.len() as i64);
        (0..out_len)
            .map(|m| {
                // upsampled-domain index of this output sample, shifted to the kernel centre
                let c = (m * self.down) as i64 + self.half as i64;
                let lo = (c - len + 1).div_euclid(up) + i64::from((c - len + 1).rem_euclid(up) != 0);
                let hi = c.div_euclid(up);
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += self.taps[(c - k * up) as usize] * x[reflect(k, n)];
                }
                acc
            })
            .collect()
    }
}

/// Even reflection about the end samples.
fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Resamples `x` from `fs_in` to `fs_out` (`fs_out <= fs_in`).
///
/// Output length is `round(len * fs_out / fs_in)`. The input should already
/// be band-limited below `fs_out / 2`.
pub fn resample_to<T: Scalar>(x: &[T], fs_in: f64, fs_out: f64) -> Result<Vec<T>> {
    if !(fs_in.is_finite() && fs_out.is_finite() && fs_out > 0.0) {
        return Err(Error::Parameter(format!("invalid rates {fs_in} -> {fs_out}")));
    }
    if fs_out > fs_in {
        return Err(Error::Unsupported(format!("upsampling {fs_in} Hz -> {fs_out} Hz")));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if fs_out == fs_in {
        return Ok(x.to_vec());
    }
    let out_len = (x.len() as f64 * fs_out / fs_in).round() as usize;
    let (up, down) = rational_ratio(fs_out / fs_in, 4096);
    let kernel = PolyphaseKernel::new(up as usize, down as usize);
    let xs: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
    Ok(kernel.apply(&xs, out_len).into_iter().map(T::of).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_reduce() {
        assert_eq!(rational_ratio(100.0 / 256.0, 4096), (25, 64));
        assert_eq!(rational_ratio(0.5, 4096), (1, 2));
        assert_eq!(rational_ratio(100.0 / 128.0, 4096), (25, 32));
        assert_eq!(rational_ratio(1.0, 4096), (1, 1));
    }

    #[test]
    fn ten_hz_sine_keeps_amplitude() {
        let fs = 256.0;
        let n = (115.0 * fs) as usize;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let y = resample_to(&x, fs, 100.0).unwrap();
        assert_eq!(y.len(), 11500);
        // compare against the analytic sine on the 100 Hz grid, away from edges
        let mut max_err: f64 = 0.0;
        for (m, v) in y.iter().enumerate().skip(200).take(11100) {
            let want = (2.0 * PI * 10.0 * m as f64 / 100.0).sin();
            max_err = max_err.max((v - want).abs());
        }
        assert!(max_err < 0.01, "{max_err}");
    }

    #[test]
    fn dc_is_preserved() {
        let x = vec![5.0f32; 1000];
        let y = resample_to(&x, 256.0, 100.0).unwrap();
        assert_eq!(y.len(), 391);
        assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-5));
        let y = resample_to(&x, 173.0, 61.0).unwrap();
        assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-5));
    }

    #[test]
    fn identity_at_equal_rates() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(resample_to(&x, 100.0, 100.0).unwrap(), x);
    }

    #[test]
    fn upsampling_is_unsupported() {
        assert!(matches!(resample_to(&[1.0f64; 10], 100.0, 200.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }
}
