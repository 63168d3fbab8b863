//! FFT helpers and decibel conversions.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        }
    });
    plan.process(buf);
}

/// Forward DFT of `x` zero-padded (or truncated) to `n` points; returns the
/// `n / 2 + 1` non-negative frequency bins.
pub fn rfft(x: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft_in_place(&mut buf, false);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`rfft`] for a real signal of length `n` (normalized).
pub fn irfft(spec: &[Complex<f64>], n: usize) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 0..=half.min(spec.len().saturating_sub(1)) {
        buf[k] = spec[k];
        if k != 0 && k != n - k {
            buf[n - k] = spec[k].conj();
        }
    }
    // DC and Nyquist of a real signal are real.
    buf[0].im = 0.0;
    if n.is_multiple_of(2) && half < spec.len() {
        buf[half] = Complex::new(spec[half].re, 0.0);
    }
    fft_in_place(&mut buf, true);
    let scale = 1.0 / n as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Complex FFT used by convolution.
pub(crate) fn complex_fft(buf: &mut [Complex<f64>], inverse: bool) {
    fft_in_place(buf, inverse);
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

pub fn power_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

pub fn amplitude_to_db(a: f64) -> f64 {
    20.0 * a.log10()
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Mean squared DFT magnitude of `x` inside each octave centered at
/// `centers`, as dB. Bands are clipped at Nyquist; a band with no DFT bins
/// yields `None`.
pub fn octave_band_power_db(x: &[f64], sample_rate: u32, centers: &[f64]) -> Vec<Option<f64>> {
    let ranges: Vec<(f64, f64)> = centers.iter().map(|&c| crate::bands::octave_edges(c)).collect();
    band_power_db(x, sample_rate, &ranges)
}

/// Mean squared DFT magnitude of `x` over each `(lo, hi)` Hz range, as dB.
pub fn band_power_db(x: &[f64], sample_rate: u32, ranges: &[(f64, f64)]) -> Vec<Option<f64>> {
    let fs = sample_rate as f64;
    // at least 1 Hz resolution so the 62.5 Hz octave holds ~44 bins
    let n = next_pow2(x.len().max(sample_rate as usize));
    let spec = rfft(x, n);
    let df = fs / n as f64;
    ranges
        .iter()
        .map(|&(lo, hi)| {
            let hi = hi.min(fs / 2.0);
            let k0 = (lo / df).ceil() as usize;
            let k1 = ((hi / df).floor() as usize).min(spec.len() - 1);
            if lo >= fs / 2.0 || k1 < k0 {
                return None;
            }
            let mean = spec[k0..=k1].iter().map(|c| c.norm_sqr()).sum::<f64>() / (k1 - k0 + 1) as f64;
            Some(power_to_db(mean))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfft_irfft_round_trip() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        for n in [37, 64] {
            let y = irfft(&rfft(&x, n), n);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_has_flat_band_power() {
        let mut x = vec![0.0; 4000];
        x[0] = 1.0;
        let p = octave_band_power_db(&x, 16000, &[62.5, 1000.0, 4000.0]);
        for v in p {
            assert!(v.unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn db_conversions_invert() {
        assert!((db_to_amplitude(amplitude_to_db(3.7)) - 3.7).abs() < 1e-12);
        assert!((db_to_power(power_to_db(0.01)) - 0.01).abs() < 1e-15);
    }
}
