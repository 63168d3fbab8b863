//! Impulse-response synthesis from path records, EQ correction and
//! rendering of dry audio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::ImpulseResponse;
use crate::bands::{octave_edges, BandProfile, BandSet, RENDER_CENTERS};
use crate::dsp::convolve::{convolve_slices, fft_convolve};
use crate::dsp::filterbank::design_bank;
use crate::dsp::fir::{design_fir_gains_with_shelf, FirFilter, Shelf};
use crate::dsp::{convolve, AudioBuffer};
use crate::error::{Error, Result};
use crate::geo::{path_energy, AirModel, MaterialCoeffs, PathRecord, N_BANDS};
use crate::par;

pub const MIN_SYNTH_RATE: u32 = 8000;
/// Group delay of the EQ correction filter.
pub const EQ_DELAY_S: f64 = 0.032;
pub const HIGHBAND_FLOOR_DB: f64 = -50.0;
/// The shelf starts this fraction below the 8 kHz octave's lower edge so
/// the transition band does not leak into it.
const SHELF_GUARD: f64 = 0.98;
/// Envelope smoothing length in units of 1/bandwidth.
const ENVELOPE_CYCLES: f64 = 4.0;
const MAX_ENVELOPE_CORRECTION: f64 = 10.0;
const TAIL_S: f64 = 0.05;

/// T60-band index whose coefficients drive render band `b` (62.5 Hz reuses 125 Hz).
fn source_band(b: usize) -> usize {
    b.saturating_sub(1).min(N_BANDS - 1)
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let mut cum = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        cum[i + 1] = cum[i] + v;
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

/// Builds an IR as the sum of octave-filtered pulse trains.
///
/// In each render band every path contributes a pulse of amplitude
/// `sqrt(e)` with a random sign (the direct path is always positive and
/// coherent across bands). The band signal's short-term energy is then
/// matched to its expected value, the path-energy histogram smoothed by
/// the band filter, which removes the slow random envelope fluctuation
/// that sign patterns would otherwise leave.
pub fn synthesize_ir(
    paths: &[PathRecord],
    materials: &[MaterialCoeffs],
    air: &AirModel,
    sample_rate: u32,
    seed: u64,
) -> Result<ImpulseResponse> {
    if sample_rate < MIN_SYNTH_RATE {
        return Err(Error::InvalidInput(format!(
            "sample rate {sample_rate} Hz is below {MIN_SYNTH_RATE} Hz; the top band cannot be represented"
        )));
    }
    if paths.is_empty() {
        return Err(Error::InvalidInput("no paths to synthesize".into()));
    }
    if let Some(p) = paths.iter().find(|p| p.bounce_counts.len() != materials.len()) {
        return Err(Error::InvalidInput(format!(
            "path has {} bounce counts for {} materials",
            p.bounce_counts.len(),
            materials.len()
        )));
    }
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let centers: Vec<f64> = RENDER_CENTERS
        .iter()
        .copied()
        .filter(|&c| octave_edges(c).0 < 0.99 * nyquist)
        .collect();
    let bank = design_bank(&centers, sample_rate)?;
    let last = paths.iter().map(|p| p.arrival_time).fold(0.0, f64::max);
    let len = (last * fs).round() as usize + (TAIL_S * fs).round() as usize + 1;
    let index: Vec<usize> = paths.iter().map(|p| (p.arrival_time * fs).round() as usize).collect();

    let bands: Vec<Vec<f64>> = par::map_range(bank.len(), |b| {
        let filter = &bank[b];
        let tb = source_band(b);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut pulses = vec![0.0; len];
        let mut energy = vec![0.0; len];
        for (p, &n) in paths.iter().zip(&index) {
            let e = path_energy(p, materials, air, tb);
            let sign = if p.order == 0 || rng.random::<bool>() { 1.0 } else { -1.0 };
            pulses[n] += sign * e.sqrt();
            energy[n] += e;
        }
        let mut y = filter.apply(&pulses);

        // energy kernel of the zero-phase filter, centered
        let half = (8.0 * fs / filter.bandwidth()).ceil() as usize;
        let mut delta = vec![0.0; 2 * half + 1];
        delta[half] = 1.0;
        let kernel: Vec<f64> = filter.apply(&delta).iter().map(|v| v * v).collect();
        let expected = fft_convolve(&energy, &kernel);
        let expected = &expected[half..half + len];

        let w = ((ENVELOPE_CYCLES * fs / filter.bandwidth()).round() as usize).max(1);
        let want = moving_average(expected, w);
        let have = moving_average(&y.iter().map(|v| v * v).collect::<Vec<_>>(), w);
        // below this the FFT-based expectation is rounding noise
        let floor = 1e-12 * want.iter().cloned().fold(0.0, f64::max);
        for ((v, &a), &b) in y.iter_mut().zip(&want).zip(&have) {
            if b > 0.0 && a > floor {
                *v *= (a / b).sqrt().clamp(1.0 / MAX_ENVELOPE_CORRECTION, MAX_ENVELOPE_CORRECTION);
            }
        }
        y
    });
    let mut out = vec![0.0; len];
    for band in &bands {
        out.iter_mut().zip(band).for_each(|(o, v)| *o += v);
    }
    let direct = paths
        .iter()
        .zip(&index)
        .filter(|(p, _)| p.order == 0)
        .map(|(_, &n)| n)
        .next();
    let buffer = AudioBuffer::new(out, sample_rate)?;
    match direct {
        Some(n) => ImpulseResponse::with_direct_index(buffer, n),
        None => ImpulseResponse::new(buffer),
    }
}

/// EQ correction filter description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqFilterSpec {
    /// Gains at the EQ bands; 1 kHz is pinned to 0 dB.
    pub gains_db: BandProfile,
    pub delay_ms: f64,
    pub highband_floor_db: f64,
}

impl EqFilterSpec {
    pub fn new(gains_db: BandProfile) -> Result<Self> {
        if gains_db.bands != BandSet::Eq {
            return Err(Error::InvalidInput("EQ filter gains must use the EQ bands".into()));
        }
        Ok(Self {
            gains_db,
            delay_ms: EQ_DELAY_S * 1000.0,
            highband_floor_db: HIGHBAND_FLOOR_DB,
        })
    }

    pub fn identity() -> Self {
        Self::new(BandProfile::uniform(BandSet::Eq, 0.0)).unwrap()
    }

    pub fn taps(&self, sample_rate: u32) -> usize {
        2 * (self.delay_ms / 1000.0 * sample_rate as f64).round() as usize + 1
    }

    pub fn shelf(&self) -> Shelf {
        Shelf {
            start_hz: SHELF_GUARD * octave_edges(8000.0).0,
            gain_db: self.highband_floor_db,
        }
    }

    pub fn design(&self, sample_rate: u32) -> Result<FirFilter> {
        let gains = BandProfile::new(BandSet::Eq, self.gains_db.values.clone())?;
        design_fir_gains_with_shelf(&gains, Some(self.shelf()), self.taps(sample_rate), sample_rate)
    }
}

/// Convolves `ir` with the EQ correction filter. The output is delayed by
/// the filter's group delay.
pub fn apply_eq(ir: &ImpulseResponse, spec: &EqFilterSpec) -> Result<ImpulseResponse> {
    let fir = spec.design(ir.sample_rate())?;
    let y = convolve_slices(ir.samples(), &fir.taps);
    ImpulseResponse::with_direct_index(AudioBuffer::new(y, ir.sample_rate())?, ir.direct_index() + fir.delay_samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderReport {
    /// Gain applied to avoid clipping, if any.
    pub normalization: Option<f64>,
    pub peak_before: f64,
}

/// Convolves dry audio with `ir`, scales by `wet_gain`, and peak-normalizes
/// only when the result would clip.
pub fn render(dry: &AudioBuffer, ir: &ImpulseResponse, wet_gain: f64) -> Result<(AudioBuffer, RenderReport)> {
    if !wet_gain.is_finite() {
        return Err(Error::InvalidInput("wet gain must be finite".into()));
    }
    let mut out = convolve(dry, ir.buffer())?.scaled(wet_gain);
    let peak = out.peak();
    let normalization = if peak > 1.0 {
        let g = 1.0 / peak;
        out = out.scaled(g);
        Some(g)
    } else {
        None
    };
    Ok((
        out,
        RenderReport {
            normalization,
            peak_before: peak,
        },
    ))
}

/// Per-band dB envelope (10 ms RMS) of an IR: rows of (time, dB per band).
pub fn db_envelope(ir: &ImpulseResponse, window_s: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    let bands = crate::dsp::octave_filterbank(ir.buffer(), BandSet::T60)?;
    let fs = ir.sample_rate() as f64;
    let w = ((window_s * fs).round() as usize).max(1);
    let rows = ir.len() / w;
    Ok((0..rows)
        .map(|r| {
            let db = bands
                .iter()
                .map(|b| {
                    let s = &b.samples()[r * w..(r + 1) * w];
                    crate::dsp::spectrum::power_to_db((s.iter().map(|v| v * v).sum::<f64>() / w as f64).max(1e-20))
                })
                .collect();
            (r as f64 * w as f64 / fs, db)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{estimate_t60, extract_eq};
    use crate::dsp::spectrum::rfft;
    use crate::geo::{trace_stochastic, RoomModel, TraceConfig};
    use crate::matopt::{optimize_all_bands, FitOptions};
    use crate::synthetic::noise_decay_ir;

    const FS: u32 = 16000;

    fn fitted_room(target: f64) -> (Vec<PathRecord>, Vec<MaterialCoeffs>, AirModel) {
        let room = RoomModel::uniform_shoebox([5.0, 7.0, 3.0], MaterialCoeffs::uniform("w", 0.8).unwrap()).unwrap();
        let cfg = TraceConfig {
            n_rays: 20_000,
            max_time: 1.5 * target + 0.1,
            ..Default::default()
        };
        let paths = trace_stochastic(&room, [1.2, 1.5, 1.4], [3.6, 5.1, 1.7], &cfg).unwrap();
        let air = AirModel::default();
        let fit = optimize_all_bands(&paths, 1, &BandProfile::uniform(BandSet::T60, target), &air, &FitOptions::default()).unwrap();
        (paths, fit.apply(&room.materials).unwrap(), air)
    }

    #[test]
    fn direct_path_lands_at_one_second() {
        let p = PathRecord {
            arrival_time: 1.0,
            distance: 343.0,
            bounce_counts: vec![0],
            order: 0,
            weight: 1.0,
        };
        let mats = vec![MaterialCoeffs::uniform("w", 0.5).unwrap()];
        let ir = synthesize_ir(&[p], &mats, &AirModel::none(), FS, 0).unwrap();
        assert_eq!(ir.direct_index(), FS as usize);
        assert_eq!(crate::analysis::argmax_abs(ir.samples()), FS as usize);
    }

    #[test]
    fn doubling_energy_scales_by_sqrt2() {
        let (paths, mats, air) = fitted_room(0.4);
        let a = synthesize_ir(&paths, &mats, &air, FS, 1).unwrap();
        let doubled: Vec<PathRecord> = paths.iter().map(|p| PathRecord { weight: 2.0 * p.weight, ..p.clone() }).collect();
        let b = synthesize_ir(&doubled, &mats, &air, FS, 1).unwrap();
        let peak = a.buffer().peak();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((y - x * 2f64.sqrt()).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn synthesized_t60_matches_optimized_target() {
        let (paths, mats, air) = fitted_room(0.6);
        let ir = synthesize_ir(&paths, &mats, &air, FS, 2).unwrap();
        let t = estimate_t60(&ir, BandSet::T60).unwrap();
        for (c, v) in t.centers().iter().zip(&t.values) {
            assert!((v / 0.6 - 1.0).abs() < 0.1, "band {c}: {v}");
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let (paths, mats, air) = fitted_room(0.3);
        assert_eq!(
            synthesize_ir(&paths, &mats, &air, FS, 9).unwrap(),
            synthesize_ir(&paths, &mats, &air, FS, 9).unwrap()
        );
    }

    #[test]
    fn low_rate_rejected() {
        let (paths, mats, air) = fitted_room(0.3);
        assert!(synthesize_ir(&paths, &mats, &air, 4000, 0).is_err());
        assert!(synthesize_ir(&paths, &mats, &air, 8000, 0).is_ok());
    }

    fn band_energy_above(x: &[f64], f0: f64) -> f64 {
        let n = crate::dsp::spectrum::next_pow2(x.len().max(FS as usize));
        let s = rfft(x, n);
        let df = FS as f64 / n as f64;
        s.iter().enumerate().filter(|(k, _)| *k as f64 * df >= f0).map(|(_, c)| c.norm_sqr()).sum()
    }

    #[test]
    fn identity_eq_is_a_32ms_delay() {
        let ir = noise_decay_ir(0.4, FS, 1.0, 1);
        let out = apply_eq(&ir, &EqFilterSpec::identity()).unwrap();
        assert_eq!(out.direct_index() - ir.direct_index(), 512);
        // cross-correlation peak
        let x = ir.samples();
        let y = out.samples();
        let lag = (0..1024)
            .max_by(|&a, &b| {
                let ca: f64 = x.iter().zip(&y[a..]).map(|(p, q)| p * q).sum();
                let cb: f64 = x.iter().zip(&y[b..]).map(|(p, q)| p * q).sum();
                ca.total_cmp(&cb)
            })
            .unwrap();
        assert_eq!(lag, 512);
        let fir = EqFilterSpec::identity().design(FS).unwrap();
        for &c in RENDER_CENTERS[..7].iter() {
            assert!(fir.magnitude_db(c).abs() < 0.1, "{c} Hz: {}", fir.magnitude_db(c));
        }
    }

    #[test]
    fn eq_gains_are_added_and_high_band_removed() {
        let ir = noise_decay_ir(0.4, FS, 1.0, 2);
        let gains = BandProfile::new(BandSet::Eq, vec![5.0, -3.0, 8.0, -6.0, 4.0, -10.0]).unwrap();
        let out = apply_eq(&ir, &EqFilterSpec::new(gains.clone()).unwrap()).unwrap();
        let a = extract_eq(&ir, BandSet::Eq).unwrap();
        let b = extract_eq(&out, BandSet::Eq).unwrap();
        for i in 0..6 {
            assert!((b.values[i] - a.values[i] - gains.values[i]).abs() < 2.0, "band {i}");
        }
        let edge = octave_edges(8000.0).0;
        let drop = 10.0 * (band_energy_above(out.samples(), edge) / band_energy_above(ir.samples(), edge)).log10();
        assert!(drop <= -40.0, "{drop}");
    }

    #[test]
    fn render_identities() {
        let dry = noise_decay_ir(10.0, FS, 0.5, 3).into_buffer().scaled(0.1);
        let mut s = vec![0.0; 10];
        s[0] = 1.0;
        let unit = ImpulseResponse::from_samples(s, FS).unwrap();
        let (out, rep) = render(&dry, &unit, 1.0).unwrap();
        assert!(rep.normalization.is_none());
        for (a, b) in dry.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (silent, _) = render(&dry, &unit, 0.0).unwrap();
        assert_eq!(silent.peak(), 0.0);
        let (loud, rep) = render(&dry, &unit, 100.0).unwrap();
        assert!(rep.normalization.is_some() && (loud.peak() - 1.0).abs() < 1e-12);
        assert!(render(&dry.resampled(8000).unwrap(), &unit, 1.0).is_err());
    }

    #[test]
    fn render_applies_ir_band_gains() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = Normal::new(0.0, 0.1).unwrap();
        let dry = AudioBuffer::new((0..4 * FS as usize).map(|_| n.sample(&mut rng)).collect(), FS).unwrap();
        let gains = BandProfile::new(BandSet::Eq, vec![3.0, -4.0, 6.0, 2.0, -5.0, 1.0]).unwrap();
        let fir = EqFilterSpec::new(gains).unwrap().design(FS).unwrap();
        let ir = ImpulseResponse::from_samples(fir.taps.clone(), FS).unwrap();
        let (wet, _) = render(&dry, &ir, 1.0).unwrap();
        let centers = BandSet::T60.centers();
        let d = crate::dsp::spectrum::octave_band_power_db(dry.samples(), FS, &centers[..6]);
        let w = crate::dsp::spectrum::octave_band_power_db(wet.samples(), FS, &centers[..6]);
        let h = crate::dsp::spectrum::octave_band_power_db(&fir.taps, FS, &centers[..6]);
        for i in 0..6 {
            let want = d[i].unwrap() + h[i].unwrap();
            assert!((w[i].unwrap() - want).abs() < 1.5, "band {i}");
        }
    }
}
