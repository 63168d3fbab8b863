use rustfft::num_complex::Complex;

use super::spectrum::{complex_fft, next_pow2};
use super::{AudioBuffer, FirFilter};
use crate::error::{Error, Result};

/// Kernels longer than this are convolved through the FFT.
pub const DIRECT_MAX_KERNEL: usize = 1024;

/// Full linear convolution of two sequences.
pub fn convolve_slices(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    if x.len().min(h.len()) <= DIRECT_MAX_KERNEL && x.len().max(h.len()) <= 4 * DIRECT_MAX_KERNEL {
        direct(x, h)
    } else {
        fft_convolve(x, h)
    }
}

pub(crate) fn direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (j, &hv) in h.iter().enumerate() {
            out[i + j] += xv * hv;
        }
    }
    out
}

pub(crate) fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let len = x.len() + h.len() - 1;
    let n = next_pow2(len);
    // pack x into the real part and h into the imaginary part, one forward FFT
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0), h.get(i).copied().unwrap_or(0.0)))
        .collect();
    complex_fft(&mut buf, false);
    let mut prod = vec![Complex::new(0.0, 0.0); n];
    for k in 0..n {
        let a = buf[k];
        let b = buf[(n - k) % n].conj();
        let xk = (a + b) * 0.5;
        let hk = (a - b) * Complex::new(0.0, -0.5);
        prod[k] = xk * hk;
    }
    complex_fft(&mut prod, true);
    let scale = 1.0 / n as f64;
    prod.truncate(len);
    prod.into_iter().map(|c| c.re * scale).collect()
}

pub fn convolve(x: &AudioBuffer, h: &AudioBuffer) -> Result<AudioBuffer> {
    if x.sample_rate() != h.sample_rate() {
        return Err(Error::SampleRateMismatch {
            left: x.sample_rate(),
            right: h.sample_rate(),
        });
    }
    Ok(AudioBuffer::from_trusted(convolve_slices(x.samples(), h.samples()), x.sample_rate()))
}

pub fn convolve_fir(x: &AudioBuffer, h: &FirFilter) -> Result<AudioBuffer> {
    if x.sample_rate() != h.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: x.sample_rate(),
            right: h.sample_rate,
        });
    }
    Ok(AudioBuffer::from_trusted(convolve_slices(x.samples(), &h.taps), x.sample_rate()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn unit_impulse_is_identity() {
        let x = noise(5000, 1);
        let y = convolve_slices(&x, &[1.0]);
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_pair_adds_delayed_copy() {
        let x = noise(3000, 2);
        let k = 700;
        let mut h = vec![0.0; k + 1];
        h[0] = 1.0;
        h[k] = 1.0;
        let y = convolve_slices(&x, &h);
        for n in 0..y.len() {
            let want = x.get(n).copied().unwrap_or(0.0) + if n >= k { x.get(n - k).copied().unwrap_or(0.0) } else { 0.0 };
            assert!((y[n] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn fft_path_matches_direct_on_one_second_signals() {
        let x = noise(16000, 3);
        let h = noise(16000, 4);
        let a = fft_convolve(&x, &h);
        let b = direct(&x, &h);
        let max = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(max < 1e-6, "{max}");
    }

    #[test]
    fn rate_mismatch_is_error() {
        let a = AudioBuffer::zeros(10, 16000);
        let b = AudioBuffer::zeros(10, 8000);
        assert!(matches!(convolve(&a, &b), Err(Error::SampleRateMismatch { .. })));
    }

    proptest! {
        #[test]
        fn convolution_commutes_with_delay(seed in 0u64..1000, k in 0usize..300, hl in 1usize..2000) {
            let x = noise(1500, seed);
            let h = noise(hl, seed + 1);
            let mut xd = vec![0.0; k];
            xd.extend_from_slice(&x);
            let lhs = convolve_slices(&xd, &h);
            let rhs = convolve_slices(&x, &h);
            prop_assert_eq!(lhs.len(), rhs.len() + k);
            for i in 0..rhs.len() {
                prop_assert!((lhs[i + k] - rhs[i]).abs() < 1e-9);
            }
            for v in &lhs[..k] {
                prop_assert!(v.abs() < 1e-9);
            }
        }
    }
}
