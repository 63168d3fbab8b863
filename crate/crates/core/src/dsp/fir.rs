//! Linear-phase FIR equalizers by the window method.
//!
//! The target magnitude is interpolated between band nodes in dB over
//! log-frequency, inverse-transformed to a zero-phase response, truncated
//! with a Hann window, and shifted to be causal. Because interpolation and
//! windowing spread gain across neighbouring octaves, the node values are
//! then corrected a few times so each octave's mean power matches its
//! requested gain.

use serde::{Deserialize, Serialize};

use super::spectrum::{band_power_db, irfft, next_pow2};
use crate::bands::{BandProfile, BandSet, EQ_REFERENCE_HZ};
use crate::error::{Error, Result};

/// 1023 taps: half-length of ~32 ms at 16 kHz.
pub const DEFAULT_TAPS: usize = 1023;
const MAX_CORRECTIONS: usize = 12;
const CORRECTION_TOL_DB: f64 = 0.005;
const PLATEAU_OCTAVES: f64 = 0.25;
const NODE_LIMIT_DB: (f64, f64) = (-100.0, 60.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub delay_samples: usize,
    pub sample_rate: u32,
}

impl FirFilter {
    pub fn delay_seconds(&self) -> f64 {
        self.delay_samples as f64 / self.sample_rate as f64
    }

    /// Magnitude response in dB at `freq_hz`.
    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.sample_rate as f64;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, &h)| {
                (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
            });
        10.0 * (re * re + im * im).log10()
    }
}

/// Constant gain at and above `start_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shelf {
    pub start_hz: f64,
    pub gain_db: f64,
}

fn target_db(f: f64, log_centers: &[f64], gains: &[f64], shelf: Option<Shelf>) -> f64 {
    if let Some(s) = shelf {
        if f >= s.start_hz {
            return s.gain_db;
        }
    }
    if f <= 0.0 {
        return gains[0];
    }
    let lf = f.log2();
    if lf <= log_centers[0] {
        return gains[0];
    }
    let last = log_centers.len() - 1;
    if lf >= log_centers[last] {
        return gains[last];
    }
    let i = log_centers.partition_point(|&c| c <= lf) - 1;
    let t = (lf - log_centers[i]) / (log_centers[i + 1] - log_centers[i]);
    gains[i] + t * (gains[i + 1] - gains[i])
}

/// Each band gain is held flat over the middle half of its octave and
/// ramps linearly (in log-frequency) to the next band's plateau.
fn plateau_nodes(log_centers: &[f64], gains: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = log_centers.len();
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(2 * n);
    for i in 0..n {
        let left = if i > 0 { (log_centers[i] - log_centers[i - 1]) / 4.0 } else { 0.25 };
        let right = if i + 1 < n { (log_centers[i + 1] - log_centers[i]) / 4.0 } else { 0.25 };
        let w = PLATEAU_OCTAVES.min(left).min(right);
        xs.extend([log_centers[i] - w, log_centers[i] + w]);
        ys.extend([gains[i], gains[i]]);
    }
    (xs, ys)
}

fn realize(log_centers: &[f64], node_db: &[f64], shelf: Option<Shelf>, taps: usize, fs: f64, grid: usize) -> Vec<f64> {
    let (log_centers, node_db) = plateau_nodes(log_centers, node_db);
    let (log_centers, node_db) = (&log_centers[..], &node_db[..]);
    let mag: Vec<_> = (0..=grid / 2)
        .map(|k| {
            let f = k as f64 * fs / grid as f64;
            let a = 10f64.powf(target_db(f, log_centers, node_db, shelf) / 20.0);
            rustfft::num_complex::Complex::new(a, 0.0)
        })
        .collect();
    let h = irfft(&mag, grid);
    let half = taps / 2;
    let mut out: Vec<f64> = (0..taps)
        .map(|k| {
            let idx = (k + grid - half) % grid;
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (k + 1) as f64 / (taps + 1) as f64).cos();
            h[idx] * w
        })
        .collect();
    for k in 0..half {
        let avg = 0.5 * (out[k] + out[taps - 1 - k]);
        out[k] = avg;
        out[taps - 1 - k] = avg;
    }
    out
}

/// Designs an odd-length linear-phase FIR whose octave-band mean power at
/// each `centers[i]` equals `gains_db[i]`.
pub fn design_fir_nodes(
    centers: &[f64],
    gains_db: &[f64],
    shelf: Option<Shelf>,
    taps: usize,
    sample_rate: u32,
) -> Result<FirFilter> {
    if taps.is_multiple_of(2) || taps < 3 {
        return Err(Error::InvalidInput(format!("FIR length must be odd and >= 3, got {taps}")));
    }
    if centers.is_empty() || centers.len() != gains_db.len() {
        return Err(Error::InvalidInput("need one gain per band center".into()));
    }
    if let Some(g) = gains_db.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("band gain {g}")));
    }
    if shelf.is_some_and(|s| !s.gain_db.is_finite() || !(s.start_hz > 0.0)) {
        return Err(Error::InvalidInput("shelf must have a finite gain and positive start".into()));
    }
    if !centers.windows(2).all(|w| w[0] < w[1]) || centers[0] <= 0.0 {
        return Err(Error::InvalidInput("band centers must be positive and increasing".into()));
    }
    let fs = sample_rate as f64;
    let grid = next_pow2((16 * taps).max(16384));
    let log_centers: Vec<f64> = centers.iter().map(|c| c.log2()).collect();
    // only octaves that sit below the shelf and below Nyquist are corrected
    let corrected: Vec<usize> = (0..centers.len())
        .filter(|&i| centers[i] / std::f64::consts::SQRT_2 < fs / 2.0)
        .filter(|&i| shelf.is_none_or(|s| centers[i] < s.start_hz))
        .collect();

    // octaves reaching into the shelf are measured only below it
    let ranges: Vec<(f64, f64)> = centers
        .iter()
        .map(|&c| {
            let (lo, hi) = crate::bands::octave_edges(c);
            (lo, shelf.map_or(hi, |s| hi.min(s.start_hz)))
        })
        .collect();
    let mut nodes = gains_db.to_vec();
    let mut h = realize(&log_centers, &nodes, shelf, taps, fs, grid);
    for _ in 0..MAX_CORRECTIONS {
        let measured = band_power_db(&h, sample_rate, &ranges);
        let mut worst: f64 = 0.0;
        for &i in &corrected {
            if let Some(m) = measured[i] {
                let err = gains_db[i] - m;
                worst = worst.max(err.abs());
                nodes[i] = (nodes[i] + err).clamp(NODE_LIMIT_DB.0, NODE_LIMIT_DB.1);
            }
        }
        if worst < CORRECTION_TOL_DB {
            break;
        }
        h = realize(&log_centers, &nodes, shelf, taps, fs, grid);
    }
    Ok(FirFilter {
        taps: h,
        delay_samples: taps / 2,
        sample_rate,
    })
}

/// Band nodes for a profile. EQ profiles are relative to 1 kHz, so the
/// 1 kHz node is pinned to 0 dB.
pub(crate) fn profile_nodes(gains: &BandProfile) -> (Vec<f64>, Vec<f64>) {
    let mut nodes: Vec<(f64, f64)> = gains
        .centers()
        .iter()
        .copied()
        .zip(gains.values.iter().copied())
        .collect();
    if gains.bands == BandSet::Eq {
        nodes.push((EQ_REFERENCE_HZ, 0.0));
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    nodes.into_iter().unzip()
}

/// Window-method design from per-band gains.
pub fn design_fir_gains(gains: &BandProfile, taps: usize, sample_rate: u32) -> Result<FirFilter> {
    design_fir_gains_with_shelf(gains, None, taps, sample_rate)
}

pub fn design_fir_gains_with_shelf(
    gains: &BandProfile,
    shelf: Option<Shelf>,
    taps: usize,
    sample_rate: u32,
) -> Result<FirFilter> {
    let (centers, values) = profile_nodes(gains);
    design_fir_nodes(&centers, &values, shelf, taps, sample_rate)
}
