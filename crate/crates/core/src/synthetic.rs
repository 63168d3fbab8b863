//! Deterministic synthetic impulse responses for tests, benchmarks and
//! demo corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::analysis::ImpulseResponse;
use crate::bands::{octave_edges, BandProfile, BandSet, T60_CENTERS};
use crate::dsp::{convolve::convolve_slices, design_fir_gains};
use crate::error::Result;

fn decay_rate(t60: f64) -> f64 {
    3.0 * std::f64::consts::LN_10 / t60
}

/// Sum of one exponentially decaying cosine per T60 octave. The carrier
/// frequency is jittered inside the octave by `seed`; all carriers start
/// in phase so the direct arrival is at sample 0.
pub fn tone_decay_ir(t60: &[f64; 7], sample_rate: u32, seed: u64) -> ImpulseResponse {
    let fs = sample_rate as f64;
    let longest = t60.iter().cloned().fold(0.0, f64::max);
    let len = ((1.5 * longest + 0.3) * fs) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0; len];
    for (&c, &t) in T60_CENTERS.iter().zip(t60) {
        let (lo, hi) = octave_edges(c);
        let hi = hi.min(0.45 * fs);
        if lo >= hi {
            continue;
        }
        let mid = (lo * hi).sqrt();
        let f = mid * 2f64.powf(rng.random_range(-0.1..0.1));
        let d = decay_rate(t);
        let w = 2.0 * std::f64::consts::PI * f / fs;
        for (n, v) in h.iter_mut().enumerate() {
            *v += (w * n as f64).cos() * (-d * n as f64 / fs).exp();
        }
    }
    ImpulseResponse::from_samples(h, sample_rate).expect("tone IR has energy")
}

/// Unit direct spike followed by exponentially decaying white noise.
pub fn noise_decay_ir(t60: f64, sample_rate: u32, duration: f64, seed: u64) -> ImpulseResponse {
    noise_decay_ir_with_level(t60, 0.1, sample_rate, duration, seed)
}

pub fn noise_decay_ir_with_level(t60: f64, tail_level: f64, sample_rate: u32, duration: f64, seed: u64) -> ImpulseResponse {
    let fs = sample_rate as f64;
    let len = (duration * fs) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, tail_level).unwrap();
    let d = decay_rate(t60);
    let mut h: Vec<f64> = (0..len)
        .map(|n| normal.sample(&mut rng) * (-d * n as f64 / fs).exp())
        .collect();
    h[0] = 1.0;
    ImpulseResponse::from_samples(h, sample_rate).expect("noise IR has energy")
}

/// Room-like IR: decaying noise tail, direct spike, and an octave-band
/// coloration given as EQ-band gains.
pub fn colored_ir(t60: f64, tail_level: f64, eq: &BandProfile, sample_rate: u32, seed: u64) -> Result<ImpulseResponse> {
    let raw = noise_decay_ir_with_level(t60, tail_level, sample_rate, 1.5 * t60 + 0.4, seed);
    let fir = design_fir_gains(eq, crate::dsp::fir::DEFAULT_TAPS, sample_rate)?;
    let mut y = convolve_slices(raw.samples(), &fir.taps);
    // drop the filter delay so the direct arrival stays near the start
    y.drain(..fir.delay_samples);
    y.truncate(raw.len());
    ImpulseResponse::from_samples(y, sample_rate)
}

/// A small corpus of varied room-like IRs: T60 in `t60_range`, per-band
/// EQ drawn from N(0, `eq_std_db`), tail level varied for a DRR spread.
pub fn synthetic_corpus(
    n: usize,
    t60_range: (f64, f64),
    eq_std_db: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<ImpulseResponse>> {
    let items: Vec<u64> = (0..n as u64).collect();
    crate::par::map_slice(&items, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i);
        let t60 = rng.random_range(t60_range.0..=t60_range.1);
        let tail = 10f64.powf(rng.random_range(-1.5..-0.5));
        let normal = Normal::new(0.0, eq_std_db.max(0.0)).unwrap();
        let gains = (0..BandSet::Eq.len()).map(|_| normal.sample(&mut rng)).collect();
        let eq = BandProfile::new(BandSet::Eq, gains)?;
        colored_ir(t60, tail, &eq, sample_rate, rng.random())
    })
    .into_iter()
    .collect()
}
