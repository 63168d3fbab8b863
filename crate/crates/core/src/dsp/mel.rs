//! STFT log-Mel features.

use serde::{Deserialize, Serialize};

use super::spectrum::rfft;
use super::AudioBuffer;
use crate::error::{Error, Result};

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;
pub const CANONICAL_MEL_BANDS: usize = 32;
pub const CANONICAL_WINDOW: usize = 256;
pub const CANONICAL_OVERLAP: f64 = 0.5;
/// Floor applied before the log, in dB.
pub const DB_FLOOR: f64 = -100.0;

/// `n_mel x n_frames` dB power matrix, row-major by Mel band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub mel_bands: usize,
    pub n_frames: usize,
    pub hop: usize,
    pub window: usize,
}

impl Spectrogram {
    pub fn shape(&self) -> [usize; 2] {
        [self.mel_bands, self.n_frames]
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular Mel filters over `n_bins` rfft bins, each scaled to unit area
/// (weights sum to one).
pub fn mel_filterbank(n_mel: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let fs = sample_rate as f64;
    let mel_max = hz_to_mel(fs / 2.0);
    let edges: Vec<f64> = (0..n_mel + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mel + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * fs / n_fft as f64;
    (0..n_mel)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut w: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect();
            let area: f64 = w.iter().sum();
            if area > 0.0 {
                w.iter_mut().for_each(|v| *v /= area);
            } else {
                // filter narrower than a bin: take the nearest bin
                let k = ((mid * n_fft as f64 / fs).round() as usize).min(n_bins - 1);
                w[k] = 1.0;
            }
            w
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-Mel spectrogram: Hann-windowed STFT without edge padding, power
/// through unit-area Mel filters, then `10 log10` floored at [`DB_FLOOR`].
pub fn log_mel_features(x: &AudioBuffer, n_mel: usize, window: usize, overlap: f64) -> Result<Spectrogram> {
    if window < 2 || n_mel == 0 {
        return Err(Error::InvalidInput("window and mel band count must be positive".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput(format!("overlap {overlap} outside [0, 1)")));
    }
    if x.len() < window {
        return Err(Error::InvalidInput(format!(
            "clip of {} samples is shorter than one {window}-sample window",
            x.len()
        )));
    }
    let hop = ((window as f64 * (1.0 - overlap)).round() as usize).max(1);
    let n_frames = 1 + (x.len() - window) / hop;
    let win = hann(window);
    let fb = mel_filterbank(n_mel, window, x.sample_rate());
    let floor = 10f64.powf(DB_FLOOR / 10.0);
    let mut values = vec![0.0; n_mel * n_frames];
    let mut frame = vec![0.0; window];
    for t in 0..n_frames {
        let start = t * hop;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = x.samples()[start + i] * win[i];
        }
        let power: Vec<f64> = rfft(&frame, window).iter().map(|c| c.norm_sqr()).collect();
        for (m, w) in fb.iter().enumerate() {
            let p: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
            values[m * n_frames + t] = 10.0 * p.max(floor).log10();
        }
    }
    Ok(Spectrogram {
        values,
        mel_bands: n_mel,
        n_frames,
        hop,
        window,
    })
}

/// The fixed feature recipe: 32 Mel bands, 256-sample Hann, 50% overlap.
pub fn canonical_features(x: &AudioBuffer) -> Result<Spectrogram> {
    log_mel_features(x, CANONICAL_MEL_BANDS, CANONICAL_WINDOW, CANONICAL_OVERLAP)
}
