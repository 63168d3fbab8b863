//! Reverberation time, equalization and direct-to-reverberant ratio of an
//! impulse response.

use serde::{Deserialize, Serialize};

use crate::bands::{BandProfile, BandSet, EQ_REFERENCE_HZ};
use crate::dsp::filterbank::design_bank;
use crate::dsp::spectrum::{octave_band_power_db, power_to_db};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

/// Half-width of the direct-sound window.
pub const DIRECT_HALF_WINDOW_S: f64 = 0.0025;
/// Minimum IR length after the direct arrival for T60 estimation.
pub const MIN_DECAY_SECONDS: f64 = 0.25;
/// Fit windows in dB below the direct level, tried in order.
pub const FIT_WINDOWS_DB: [(f64, f64); 3] = [(-5.0, -35.0), (-5.0, -25.0), (-5.0, -15.0)];
const MIN_DECAY_RANGE_DB: f64 = 10.0;
const NOISE_MARGIN_DB: f64 = 6.0;
const ENVELOPE_WINDOW_S: f64 = 0.010;
/// A band-limited decay is only trusted if bandwidth·T60 reaches this;
/// shorter decays are dominated by the analysis filter's own ringing.
const MIN_BANDWIDTH_TIME_PRODUCT: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    buffer: AudioBuffer,
    direct_index: usize,
}

impl ImpulseResponse {
    /// Wraps `buffer`, locating the direct arrival at the absolute peak.
    pub fn new(buffer: AudioBuffer) -> Result<Self> {
        if buffer.is_empty() {
            return Err(Error::InvalidInput("impulse response is empty".into()));
        }
        let direct_index = argmax_abs(buffer.samples());
        if buffer.samples()[direct_index] == 0.0 {
            return Err(Error::InvalidInput("impulse response is all zeros".into()));
        }
        Ok(Self {
            buffer,
            direct_index,
        })
    }

    pub fn from_samples(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(AudioBuffer::new(samples, sample_rate)?)
    }

    /// Wraps `buffer` with a caller-provided direct arrival.
    pub fn with_direct_index(buffer: AudioBuffer, direct_index: usize) -> Result<Self> {
        if direct_index >= buffer.len() {
            return Err(Error::InvalidInput(format!(
                "direct index {direct_index} outside IR of length {}",
                buffer.len()
            )));
        }
        if buffer.peak() == 0.0 {
            return Err(Error::InvalidInput("impulse response is all zeros".into()));
        }
        Ok(Self {
            buffer,
            direct_index,
        })
    }

    pub fn buffer(&self) -> &AudioBuffer {
        &self.buffer
    }

    pub fn into_buffer(self) -> AudioBuffer {
        self.buffer
    }

    pub fn samples(&self) -> &[f64] {
        self.buffer.samples()
    }

    pub fn sample_rate(&self) -> u32 {
        self.buffer.sample_rate()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn direct_index(&self) -> usize {
        self.direct_index
    }

    pub fn direct_time(&self) -> f64 {
        self.direct_index as f64 / self.sample_rate() as f64
    }

    /// Sample range `[start, end)` of the direct-sound segment.
    pub fn direct_window(&self) -> (usize, usize) {
        let half = (DIRECT_HALF_WINDOW_S * self.sample_rate() as f64).round() as usize;
        let start = self.direct_index.saturating_sub(half);
        let end = (self.direct_index + half + 1).min(self.len());
        (start, end)
    }
}

pub(crate) fn argmax_abs(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Schroeder curve from the direct arrival to the noise cut, 0 dB at start.
    pub edc_db: Vec<f64>,
    pub sample_rate: u32,
    pub slope_db_per_s: f64,
    pub intercept_db: f64,
    pub fit_range_db: (f64, f64),
    pub t60: f64,
    /// Envelope peak to noise floor, dB.
    pub decay_range_db: f64,
    /// Sample index (relative to the direct arrival) where the curve was cut.
    pub truncation_index: usize,
}

/// Per-band T60 outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDecay {
    pub center: f64,
    pub fit: Option<DecayFit>,
    pub reason: Option<String>,
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let mut cum = Vec::with_capacity(x.len() + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        cum.push(acc);
    }
    let half = w / 2;
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + w - half).min(x.len());
            (cum[b] - cum[a]) / (b - a) as f64
        })
        .collect()
}

/// Schroeder decay fit of `x` starting at `start`.
///
/// `bandwidth` enables the filter-ringing check for band-limited input.
pub fn fit_decay(x: &[f64], sample_rate: u32, start: usize, bandwidth: Option<f64>) -> std::result::Result<DecayFit, String> {
    let fs = sample_rate as f64;
    let e: Vec<f64> = x[start.min(x.len())..].iter().map(|v| v * v).collect();
    let n = e.len();
    if n < 16 {
        return Err("too few samples after the direct arrival".into());
    }
    let w = ((ENVELOPE_WINDOW_S * fs) as usize).max(1);
    let env = moving_average(&e, w);
    let env_peak_idx = argmax_abs(&env);
    let env_peak = env[env_peak_idx];
    if env_peak <= 0.0 {
        return Err("no energy".into());
    }
    let tail_start = (0.9 * n as f64) as usize;
    let tail = e[tail_start..].iter().sum::<f64>() / (n - tail_start) as f64;
    let floor_db = power_to_db(tail / env_peak);
    let decay_range_db = -floor_db;
    if decay_range_db < MIN_DECAY_RANGE_DB {
        return Err(format!("decay range {decay_range_db:.1} dB above noise floor"));
    }
    let cut = if tail > 0.0 {
        let thresh = env_peak * 10f64.powf((floor_db + NOISE_MARGIN_DB) / 10.0);
        (env_peak_idx..n).find(|&i| env[i] < thresh).unwrap_or(n)
    } else {
        n
    };

    let SchroederFit {
        edc_db,
        slope_db_per_s: slope,
        intercept_db: intercept,
        fit_range_db: (hi, lo),
    } = schroeder_fit(&e[..cut], fs)?;
    let t60 = -60.0 / slope;
    if let Some(b) = bandwidth {
        if b * t60 < MIN_BANDWIDTH_TIME_PRODUCT {
            return Err(format!("T60 {t60:.3} s too short to resolve in a {b:.0} Hz band"));
        }
    }
    Ok(DecayFit {
        edc_db,
        sample_rate,
        slope_db_per_s: slope,
        intercept_db: intercept,
        fit_range_db: (hi, lo),
        t60,
        decay_range_db,
        truncation_index: cut,
    })
}

pub(crate) struct SchroederFit {
    pub edc_db: Vec<f64>,
    pub slope_db_per_s: f64,
    pub intercept_db: f64,
    pub fit_range_db: (f64, f64),
}

/// Backward-integrates the energy sequence `e` (0 dB at its first sample)
/// and fits a line over the first fit window the curve spans.
pub(crate) fn schroeder_fit(e: &[f64], fs: f64) -> std::result::Result<SchroederFit, String> {
    let mut edc = vec![0.0; e.len()];
    let mut acc = 0.0;
    for i in (0..e.len()).rev() {
        acc += e[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err("no energy".into());
    }
    let edc_db: Vec<f64> = edc.iter().map(|&v| power_to_db((v / total).max(1e-300))).collect();
    let mut chosen = None;
    for &(hi, lo) in &FIT_WINDOWS_DB {
        let i0 = edc_db.iter().position(|&v| v <= hi);
        let i1 = edc_db.iter().position(|&v| v <= lo);
        if let (Some(i0), Some(i1)) = (i0, i1) {
            if i1 > i0 + 2 {
                chosen = Some((hi, lo, i0, i1));
                break;
            }
        }
    }
    let Some((hi, lo, i0, i1)) = chosen else {
        return Err("decay curve does not span a fit window".into());
    };
    let (slope, intercept) = line_fit((i0..i1).map(|i| i as f64 / fs), edc_db[i0..i1].iter().copied());
    if !(slope < 0.0) {
        return Err("non-negative decay slope".into());
    }
    Ok(SchroederFit {
        edc_db,
        slope_db_per_s: slope,
        intercept_db: intercept,
        fit_range_db: (hi, lo),
    })
}

/// Least-squares line through (t, y); returns (slope, intercept).
pub(crate) fn line_fit(t: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, y) in t.zip(y) {
        n += 1.0;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let d = n * stt - st * st;
    let slope = (n * sty - st * sy) / d;
    (slope, (sy - slope * st) / n)
}

/// Per-band decay fits, including the reason for each unreliable band.
pub fn estimate_t60_detail(ir: &ImpulseResponse, bands: BandSet) -> Result<Vec<BandDecay>> {
    let fs = ir.sample_rate() as f64;
    let after = (ir.len() - ir.direct_index()) as f64 / fs;
    if after < MIN_DECAY_SECONDS {
        return Err(Error::InvalidInput(format!(
            "IR has {after:.3} s after the direct arrival, need {MIN_DECAY_SECONDS} s"
        )));
    }
    let bank = design_bank(bands.centers(), ir.sample_rate())?;
    Ok(par::map_slice(&bank, |f| {
        let y = f.apply(ir.samples());
        match fit_decay(&y, ir.sample_rate(), ir.direct_index(), Some(f.bandwidth())) {
            Ok(fit) => BandDecay {
                center: f.center,
                fit: Some(fit),
                reason: None,
            },
            Err(reason) => BandDecay {
                center: f.center,
                fit: None,
                reason: Some(reason),
            },
        }
    }))
}

/// Per-band T60 in seconds. Unreliable bands are marked invalid in the
/// mask and carry the value of their nearest reliable neighbour.
pub fn estimate_t60(ir: &ImpulseResponse, bands: BandSet) -> Result<BandProfile> {
    let detail = estimate_t60_detail(ir, bands)?;
    let valid: Vec<bool> = detail.iter().map(|d| d.fit.is_some()).collect();
    let raw: Vec<f64> = detail
        .iter()
        .map(|d| d.fit.as_ref().map_or(1.0, |f| f.t60))
        .collect();
    let profile = BandProfile::new(bands, raw)?.with_mask(valid)?;
    let values = profile.filled()?;
    BandProfile::new(bands, values)?.with_mask(profile.valid)
}

/// Full-band T60 (no band filtering).
pub fn broadband_t60(ir: &ImpulseResponse) -> Result<DecayFit> {
    fit_decay(ir.samples(), ir.sample_rate(), ir.direct_index(), None).map_err(Error::Unmeasurable)
}

/// Octave-band gains in dB relative to the 1 kHz octave.
pub fn extract_eq(ir: &ImpulseResponse, bands: BandSet) -> Result<BandProfile> {
    let mut centers = bands.centers().to_vec();
    centers.push(EQ_REFERENCE_HZ);
    let levels = octave_band_power_db(ir.samples(), ir.sample_rate(), &centers);
    let reference = levels[centers.len() - 1]
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Unmeasurable("no energy in the 1 kHz reference octave".into()))?;
    let mut values = Vec::with_capacity(bands.len());
    let mut valid = Vec::with_capacity(bands.len());
    for level in &levels[..bands.len()] {
        match level.filter(|v| v.is_finite()) {
            Some(v) => {
                values.push(v - reference);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    BandProfile::new(bands, values)?.with_mask(valid)
}

/// Direct-to-reverberant ratio outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Drr {
    Db(f64),
    /// No energy outside the direct window.
    Anechoic,
}

impl Drr {
    pub fn db(self) -> f64 {
        match self {
            Drr::Db(v) => v,
            Drr::Anechoic => f64::INFINITY,
        }
    }
}

/// Energies (direct, reverberant).
pub fn direct_reverberant_energy(ir: &ImpulseResponse) -> (f64, f64) {
    let (a, b) = ir.direct_window();
    let s = ir.samples();
    let direct: f64 = s[a..b].iter().map(|v| v * v).sum();
    let reverb: f64 = s[..a].iter().chain(&s[b..]).map(|v| v * v).sum();
    (direct, reverb)
}

pub fn compute_drr(ir: &ImpulseResponse) -> Result<Drr> {
    let (direct, reverb) = direct_reverberant_energy(ir);
    if direct <= 0.0 {
        return Err(Error::Unmeasurable("no energy in the direct window".into()));
    }
    if reverb <= 0.0 {
        return Ok(Drr::Anechoic);
    }
    Ok(Drr::Db(power_to_db(direct / reverb)))
}
