//! Zero-phase octave filterbank built from Butterworth second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::AudioBuffer;
use crate::bands::{octave_edges, BandSet};
use crate::error::{Error, Result};
use crate::par;

/// Butterworth prototype order. A band-pass doubles it (four sections).
pub const BUTTERWORTH_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator with `a[0] == 1`.
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex<f64>) -> Complex<f64> {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (1.0 + z_inv * self.a[1] + z2 * self.a[2])
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex<f64> {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let z_inv = Complex::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Causal filtering (transposed direct form II).
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * y + z2;
                z2 = s.b[2] * input - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Forward-backward filtering; output has the input's length. `pad`
    /// zeros are appended internally so the forward ringing is not cut
    /// before the backward pass.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let mut buf = Vec::with_capacity(x.len() + pad);
        buf.extend_from_slice(x);
        buf.resize(x.len() + pad, 0.0);
        self.filter_in_place(&mut buf);
        buf.reverse();
        self.filter_in_place(&mut buf);
        buf.reverse();
        buf.truncate(x.len());
        buf
    }

    fn normalize_at(&mut self, freq_hz: f64, sample_rate: f64) {
        let g = self.response(freq_hz, sample_rate).norm();
        let per = g.powf(-1.0 / self.sections.len() as f64);
        for s in &mut self.sections {
            for b in &mut s.b {
                *b *= per;
            }
        }
    }
}

fn prototype_poles(order: usize) -> Vec<Complex<f64>> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(s: Complex<f64>, fs: f64) -> Complex<f64> {
    (2.0 * fs + s) / (2.0 * fs - s)
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Pairs digital poles into sections; `zeros` gives the numerator used for
/// complex-pair and real-pole sections respectively.
fn sections_from_poles(poles: &[Complex<f64>], pair_b: [f64; 3], single_b: [f64; 3]) -> Vec<Biquad> {
    let mut out = Vec::new();
    for p in poles.iter().filter(|p| p.im > 1e-12) {
        out.push(Biquad {
            b: pair_b,
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    for p in poles.iter().filter(|p| p.im.abs() <= 1e-12) {
        out.push(Biquad {
            b: single_b,
            a: [1.0, -p.re, 0.0],
        });
    }
    out
}

/// Digital Butterworth band-pass over `[lo, hi]` Hz.
pub fn butter_bandpass(order: usize, lo: f64, hi: f64, sample_rate: f64) -> Result<SosFilter> {
    if !(0.0 < lo && lo < hi && hi < sample_rate / 2.0) {
        return Err(Error::InvalidInput(format!(
            "band-pass edges {lo}..{hi} Hz invalid at {sample_rate} Hz"
        )));
    }
    let (wl, wh) = (prewarp(lo, sample_rate), prewarp(hi, sample_rate));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        poles.push(bilinear(half + disc, sample_rate));
        poles.push(bilinear(half - disc, sample_rate));
    }
    let mut f = SosFilter {
        sections: sections_from_poles(&poles, [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]),
    };
    let center = sample_rate / PI * (w0 / (2.0 * sample_rate)).atan();
    f.normalize_at(center, sample_rate);
    Ok(f)
}

/// Digital Butterworth high-pass with cutoff `fc` Hz.
pub fn butter_highpass(order: usize, fc: f64, sample_rate: f64) -> Result<SosFilter> {
    if !(0.0 < fc && fc < sample_rate / 2.0) {
        return Err(Error::InvalidInput(format!(
            "high-pass cutoff {fc} Hz invalid at {sample_rate} Hz"
        )));
    }
    let wc = prewarp(fc, sample_rate);
    let poles: Vec<_> = prototype_poles(order)
        .into_iter()
        .map(|p| bilinear(wc / p, sample_rate))
        .collect();
    let mut f = SosFilter {
        sections: sections_from_poles(&poles, [1.0, -2.0, 1.0], [1.0, -1.0, 0.0]),
    };
    f.normalize_at(sample_rate / 2.0, sample_rate);
    Ok(f)
}

/// One octave filter of the bank.
#[derive(Debug, Clone)]
pub struct OctaveFilter {
    pub center: f64,
    pub lower_edge: f64,
    /// Upper edge actually used (Nyquist for a shelf-limited top band).
    pub upper_edge: f64,
    pub sos: SosFilter,
    pad: usize,
}

impl OctaveFilter {
    /// Designs the octave filter for `center`. When the upper edge reaches
    /// Nyquist and `allow_shelf` is set, the band becomes a high-pass.
    pub fn design(center: f64, sample_rate: u32, allow_shelf: bool) -> Result<Self> {
        let fs = sample_rate as f64;
        let nyquist = fs / 2.0;
        let (lo, hi) = octave_edges(center);
        if lo >= nyquist * 0.99 {
            return Err(Error::BandAboveNyquist { center, nyquist });
        }
        let pad = (12.0 * fs / lo).ceil() as usize;
        if hi >= nyquist * 0.99 {
            if !allow_shelf {
                return Err(Error::BandAboveNyquist { center, nyquist });
            }
            return Ok(Self {
                center,
                lower_edge: lo,
                upper_edge: nyquist,
                sos: butter_highpass(BUTTERWORTH_ORDER, lo, fs)?,
                pad,
            });
        }
        Ok(Self {
            center,
            lower_edge: lo,
            upper_edge: hi,
            sos: butter_bandpass(BUTTERWORTH_ORDER, lo, hi, fs)?,
            pad,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.upper_edge - self.lower_edge
    }

    /// Zero-phase filtering; same length as the input.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.sos.filtfilt(x, self.pad)
    }

    /// Power response of the zero-phase (forward-backward) filter.
    pub fn power_response(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        self.sos.response(freq_hz, sample_rate).norm_sqr().powi(2)
    }
}

/// Designs a bank for arbitrary increasing octave centers; only the last
/// band may be shelf-limited at Nyquist.
pub fn design_bank(centers: &[f64], sample_rate: u32) -> Result<Vec<OctaveFilter>> {
    if !centers.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidInput("band centers must be strictly increasing".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if let Some(&center) = centers.iter().find(|&&c| octave_edges(c).0 >= nyquist * 0.99) {
        return Err(Error::BandAboveNyquist { center, nyquist });
    }
    centers
        .iter()
        .enumerate()
        .map(|(i, &c)| OctaveFilter::design(c, sample_rate, i + 1 == centers.len()))
        .collect()
}

/// Splits `x` into one zero-phase octave band per center.
pub fn octave_filterbank_centers(x: &AudioBuffer, centers: &[f64]) -> Result<Vec<AudioBuffer>> {
    let bank = design_bank(centers, x.sample_rate())?;
    Ok(par::map_slice(&bank, |f| {
        AudioBuffer::from_trusted(f.apply(x.samples()), x.sample_rate())
    }))
}

/// Splits `x` into the octave bands of a canonical band set.
pub fn octave_filterbank(x: &AudioBuffer, bands: BandSet) -> Result<Vec<AudioBuffer>> {
    octave_filterbank_centers(x, bands.centers())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn bandpass_is_unity_at_center_and_3db_at_edges() {
        let f = butter_bandpass(4, 707.1, 1414.2, 16000.0).unwrap();
        assert!((f.response(1000.0, 16000.0).norm() - 1.0).abs() < 1e-3);
        let edge = f.response(707.1, 16000.0).norm();
        assert!((edge - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3, "{edge}");
        assert_eq!(f.sections.len(), 4);
    }

    #[test]
    fn highpass_shape() {
        let f = butter_highpass(4, 5656.9, 16000.0).unwrap();
        assert!((f.response(7999.0, 16000.0).norm() - 1.0).abs() < 1e-3);
        assert!((f.response(5656.9, 16000.0).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(f.response(2000.0, 16000.0).norm() < 0.03);
    }

    #[test]
    fn rolloff_is_monotone_outside_band() {
        let bank = design_bank(BandSet::T60.centers(), 16000).unwrap();
        for f in &bank[..6] {
            let mut prev = f64::INFINITY;
            let mut freq = f.lower_edge;
            while freq > 20.0 {
                let p = f.power_response(freq, 16000.0);
                assert!(p <= prev * (1.0 + 1e-9));
                prev = p;
                freq *= 0.95;
            }
            let mut prev = f64::INFINITY;
            let mut freq = f.upper_edge;
            while freq < 7900.0 {
                let p = f.power_response(freq, 16000.0);
                assert!(p <= prev * (1.0 + 1e-9));
                prev = p;
                freq *= 1.05;
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_bands() {
        let x = AudioBuffer::zeros(4000, 16000);
        for b in octave_filterbank(&x, BandSet::T60).unwrap() {
            assert!(b.samples().iter().all(|&s| s == 0.0));
            assert_eq!(b.len(), 4000);
        }
    }

    #[test]
    fn sine_energy_lands_in_its_band() {
        let x: Vec<f64> = (0..16000)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let bands = octave_filterbank(&AudioBuffer::new(x, 16000).unwrap(), BandSet::T60).unwrap();
        let e: Vec<f64> = bands.iter().map(|b| b.energy()).collect();
        let total: f64 = e.iter().sum();
        assert!(e[3] / total >= 0.9, "{e:?}");
    }

    #[test]
    fn white_noise_band_energies_sum_to_input() {
        let fs = 16000u32;
        let x = noise(10 * fs as usize, 3);
        let buf = AudioBuffer::new(x.clone(), fs).unwrap();
        let bands = octave_filterbank(&buf, BandSet::T60).unwrap();
        let sum: f64 = bands.iter().map(|b| b.energy()).sum();
        // input energy inside the 125 Hz lower edge .. Nyquist span
        let n = x.len();
        let spec = crate::dsp::spectrum::rfft(&x, n);
        let df = fs as f64 / n as f64;
        let lo = (125.0 / std::f64::consts::SQRT_2 / df).ceil() as usize;
        let span: f64 = spec[lo..]
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = if lo + k == spec.len() - 1 { 1.0 } else { 2.0 };
                w * c.norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        let diff_db = 10.0 * (sum / span).log10();
        assert!(diff_db.abs() < 1.0, "{diff_db} dB");
    }

    #[test]
    fn rejects_band_above_nyquist() {
        let x = AudioBuffer::zeros(100, 8000);
        match octave_filterbank(&x, BandSet::T60) {
            Err(Error::BandAboveNyquist { center, .. }) => assert_eq!(center, 8000.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linearity() {
        let fs = 16000;
        let x = noise(3000, 1);
        let y = noise(3000, 2);
        let (a, b) = (0.7, -2.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = octave_filterbank(&AudioBuffer::new(x, fs).unwrap(), BandSet::T60).unwrap();
        let fy = octave_filterbank(&AudioBuffer::new(y, fs).unwrap(), BandSet::T60).unwrap();
        let fm = octave_filterbank(&AudioBuffer::new(mix, fs).unwrap(), BandSet::T60).unwrap();
        for ((bx, by), bm) in fx.iter().zip(&fy).zip(&fm) {
            for i in 0..3000 {
                let want = a * bx.samples()[i] + b * by.samples()[i];
                assert!((bm.samples()[i] - want).abs() < 1e-9);
            }
        }
    }
}
