//! IR corpus expansion along T60, DRR and EQ.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    broadband_t60, compute_drr, direct_reverberant_energy, estimate_t60, extract_eq, Drr, ImpulseResponse,
    DIRECT_HALF_WINDOW_S,
};
use crate::bands::{BandProfile, BandSet};
use crate::dsp::{convolve::convolve_slices, design_fir_gains, fir::DEFAULT_TAPS, AudioBuffer};
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_EQ_STD_INFLATION: f64 = 1.25;

/// Independent normal model of per-band EQ gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqDistribution {
    pub bands: BandSet,
    pub mean_db: Vec<f64>,
    pub std_db: Vec<f64>,
}

impl EqDistribution {
    pub fn new(mean_db: Vec<f64>, std_db: Vec<f64>) -> Result<Self> {
        let n = BandSet::Eq.len();
        if mean_db.len() != n || std_db.len() != n {
            return Err(Error::InvalidInput(format!("EQ model needs {n} means and {n} deviations")));
        }
        if mean_db.iter().chain(&std_db).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EQ model parameter".into()));
        }
        if std_db.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidInput("EQ standard deviations must be >= 0".into()));
        }
        Ok(Self {
            bands: BandSet::Eq,
            mean_db,
            std_db,
        })
    }

    /// Draws one EQ profile with every deviation multiplied by `inflation`.
    pub fn sample(&self, inflation: f64, rng: &mut impl Rng) -> Result<BandProfile> {
        let values = self
            .mean_db
            .iter()
            .zip(&self.std_db)
            .map(|(&m, &s)| {
                Normal::new(m, s * inflation)
                    .map(|d| d.sample(rng))
                    .map_err(|e| Error::InvalidInput(format!("EQ draw: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        BandProfile::new(self.bands, values)
    }
}

/// Per-band sample mean and standard deviation of the corpus EQ.
pub fn fit_eq_distribution(irs: &[ImpulseResponse]) -> Result<EqDistribution> {
    if irs.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 IRs to fit an EQ model, got {}", irs.len())));
    }
    let eqs: Vec<Vec<f64>> = irs
        .iter()
        .enumerate()
        .filter_map(|(i, ir)| match extract_eq(ir, BandSet::Eq) {
            Ok(p) if p.all_valid() => Some(p.values),
            Ok(_) => {
                warn!("IR {i}: EQ not measurable in every band, skipped");
                None
            }
            Err(e) => {
                warn!("IR {i}: {e}, skipped");
                None
            }
        })
        .collect();
    if eqs.len() < 2 {
        return Err(Error::InvalidInput("fewer than 2 IRs with measurable EQ".into()));
    }
    let n = eqs.len() as f64;
    let bands = BandSet::Eq.len();
    let mean: Vec<f64> = (0..bands).map(|b| eqs.iter().map(|e| e[b]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..bands)
        .map(|b| (eqs.iter().map(|e| (e[b] - mean[b]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    EqDistribution::new(mean, std)
}

/// Measure-and-redesign passes after the first EQ filter.
const EQ_REFINEMENTS: usize = 3;
/// Largest per-band EQ miss (dB) accepted without refinement.
const EQ_REFINE_TOL_DB: f64 = 0.25;

fn filter_eq(ir: &ImpulseResponse, delta: &[f64]) -> Result<ImpulseResponse> {
    let fir = design_fir_gains(&BandProfile::new(BandSet::Eq, delta.to_vec())?, DEFAULT_TAPS, ir.sample_rate())?;
    let y = convolve_slices(ir.samples(), &fir.taps);
    ImpulseResponse::with_direct_index(AudioBuffer::new(y, ir.sample_rate())?, ir.direct_index() + fir.delay_samples)
}

/// Filters `ir` so its EQ moves to a target drawn from `model`. The output
/// carries the filter's group delay; its direct index is shifted to match.
///
/// Band levels of the product depend on how the IR's energy is spread
/// inside each octave, so the filter is redesigned from the measured miss
/// a few times.
pub fn augment_eq(
    ir: &ImpulseResponse,
    model: &EqDistribution,
    inflation: f64,
    rng: &mut impl Rng,
) -> Result<(ImpulseResponse, BandProfile)> {
    let target = model.sample(inflation, rng)?;
    let current = extract_eq(ir, BandSet::Eq)?;
    let mut delta: Vec<f64> = target.values.iter().zip(&current.values).map(|(t, c)| t - c).collect();
    let mut best = filter_eq(ir, &delta)?;
    let mut best_miss = f64::INFINITY;
    for pass in 0..=EQ_REFINEMENTS {
        let out = if pass == 0 { best.clone() } else { filter_eq(ir, &delta)? };
        let got = extract_eq(&out, BandSet::Eq)?;
        let miss: Vec<f64> = (0..delta.len())
            .map(|b| if got.valid[b] { target.values[b] - got.values[b] } else { 0.0 })
            .collect();
        let worst = miss.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst < best_miss {
            best_miss = worst;
            best = out;
        }
        if worst < EQ_REFINE_TOL_DB {
            break;
        }
        delta.iter_mut().zip(&miss).for_each(|(d, m)| *d += m);
    }
    Ok((best, target))
}

/// Re-weights the tail after the direct sound so the full-band T60 becomes
/// `target_t60`. When the decay is slowed, samples past the source's
/// noise-floor cut are zeroed rather than amplified.
pub fn augment_t60(ir: &ImpulseResponse, target_t60: f64) -> Result<ImpulseResponse> {
    if !(target_t60 > 0.0 && target_t60.is_finite()) {
        return Err(Error::InvalidInput(format!("target T60 must be positive, got {target_t60}")));
    }
    let fit = broadband_t60(ir)?;
    let fs = ir.sample_rate() as f64;
    let rate = |t60: f64| 3.0 * std::f64::consts::LN_10 / t60;
    let k = rate(fit.t60) - rate(target_t60);
    if k == 0.0 {
        return Ok(ir.clone());
    }
    let d = ir.direct_index();
    let start = d + (DIRECT_HALF_WINDOW_S * fs).round() as usize;
    let cut = d + fit.truncation_index;
    let mut s = ir.samples().to_vec();
    for (n, v) in s.iter_mut().enumerate().skip(start + 1) {
        if k > 0.0 && n >= cut {
            *v = 0.0;
        } else {
            *v *= (k * (n - d) as f64 / fs).exp();
        }
    }
    ImpulseResponse::with_direct_index(AudioBuffer::new(s, ir.sample_rate())?, d)
}

/// Scales the direct segment so the DRR becomes `target_db`.
pub fn augment_drr(ir: &ImpulseResponse, target_db: f64) -> Result<ImpulseResponse> {
    if !target_db.is_finite() {
        return Err(Error::InvalidInput("target DRR must be finite".into()));
    }
    let (direct, reverb) = direct_reverberant_energy(ir);
    if direct <= 0.0 {
        return Err(Error::Unmeasurable("no energy in the direct window".into()));
    }
    if reverb <= 0.0 {
        return Err(Error::Unmeasurable("no reverberant energy, DRR is unbounded".into()));
    }
    let g = (10f64.powf(target_db / 10.0) * reverb / direct).sqrt();
    if (g - 1.0).abs() < 1e-12 {
        return Ok(ir.clone());
    }
    let (a, b) = ir.direct_window();
    let mut s = ir.samples().to_vec();
    s[a..b].iter_mut().for_each(|v| *v *= g);
    ImpulseResponse::with_direct_index(AudioBuffer::new(s, ir.sample_rate())?, ir.direct_index())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub target_t60_range: (f64, f64),
    pub t60_grid: usize,
    pub drr_range: (f64, f64),
    pub eq_model: EqDistribution,
    pub eq_std_inflation: f64,
    pub seed: u64,
    /// Number of augmented IRs to attempt.
    pub count: usize,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.target_t60_range;
        if !(0.0 < lo && lo < hi) {
            return Err(Error::InvalidInput(format!("T60 range ({lo}, {hi}) must satisfy 0 < lo < hi")));
        }
        if self.t60_grid == 0 {
            return Err(Error::InvalidInput("t60_grid must be >= 1".into()));
        }
        if !(self.drr_range.0 <= self.drr_range.1) {
            return Err(Error::InvalidInput("DRR range must satisfy lo <= hi".into()));
        }
        if !(self.eq_std_inflation >= 1.0) {
            return Err(Error::InvalidInput("EQ std inflation must be >= 1".into()));
        }
        Ok(())
    }

    /// Bin index of a T60 value, or None outside the range.
    pub fn bin_of(&self, t60: f64) -> Option<usize> {
        let (lo, hi) = self.target_t60_range;
        if !(lo..=hi).contains(&t60) {
            return None;
        }
        let b = ((t60 - lo) / (hi - lo) * self.t60_grid as f64) as usize;
        Some(b.min(self.t60_grid - 1))
    }
}

/// Labels measured on the final augmented IR, plus the targets that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedLabels {
    pub t60: BandProfile,
    pub t60_broadband: f64,
    pub eq: BandProfile,
    pub drr: Drr,
    pub source_index: usize,
    pub target_t60: f64,
    pub target_drr: f64,
    pub target_eq: BandProfile,
}

#[derive(Debug, Clone)]
pub struct AugmentedIr {
    pub index: usize,
    pub ir: ImpulseResponse,
    pub labels: AugmentedLabels,
}

pub(crate) fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn augment_one(irs: &[ImpulseResponse], spec: &AugmentationSpec, i: usize) -> Result<AugmentedIr> {
    let mut rng = item_rng(spec.seed, i as u64);
    let source_index = rng.random_range(0..irs.len());
    let (lo, hi) = spec.target_t60_range;
    let width = (hi - lo) / spec.t60_grid as f64;
    let bin = i % spec.t60_grid;
    let target_t60 = lo + width * (bin as f64 + rng.random::<f64>());
    let target_drr = if spec.drr_range.0 < spec.drr_range.1 {
        rng.random_range(spec.drr_range.0..spec.drr_range.1)
    } else {
        spec.drr_range.0
    };
    let ir = augment_t60(&irs[source_index], target_t60)?;
    let ir = augment_drr(&ir, target_drr)?;
    let (ir, target_eq) = augment_eq(&ir, &spec.eq_model, spec.eq_std_inflation, &mut rng)?;
    let labels = AugmentedLabels {
        t60: estimate_t60(&ir, BandSet::T60)?,
        t60_broadband: broadband_t60(&ir)?.t60,
        eq: extract_eq(&ir, BandSet::Eq)?,
        drr: compute_drr(&ir)?,
        source_index,
        target_t60,
        target_drr,
        target_eq,
    };
    Ok(AugmentedIr { index: i, ir, labels })
}

/// Generates `spec.count` augmented IRs. Items are assigned to T60 bins
/// round-robin, so the target histogram is flat. Failed items are logged
/// and skipped.
pub fn build_augmented_corpus(irs: &[ImpulseResponse], spec: &AugmentationSpec) -> Result<Vec<AugmentedIr>> {
    spec.validate()?;
    if irs.is_empty() {
        return Err(Error::InvalidInput("augmentation needs at least one source IR".into()));
    }
    let results = par::map_range(spec.count, |i| augment_one(irs, spec, i));
    let mut out = Vec::with_capacity(spec.count);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(item) => out.push(item),
            Err(e) => warn!("augmented item {i} skipped: {e}"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{noise_decay_ir, tone_decay_ir};

    const FS: u32 = 16000;

    fn impulse() -> ImpulseResponse {
        let mut s = vec![0.0; 8192];
        s[0] = 1.0;
        ImpulseResponse::from_samples(s, FS).unwrap()
    }

    fn filtered(gains: Vec<f64>) -> ImpulseResponse {
        let f = design_fir_gains(&BandProfile::new(BandSet::Eq, gains).unwrap(), 1023, FS).unwrap();
        ImpulseResponse::from_samples(f.taps, FS).unwrap()
    }

    #[test]
    fn identical_corpus_has_zero_spread() {
        let ir = filtered(vec![3.0, -2.0, 1.0, 0.0, -4.0, 2.0]);
        let m = fit_eq_distribution(&vec![ir.clone(); 4]).unwrap();
        let eq = extract_eq(&ir, BandSet::Eq).unwrap();
        for b in 0..6 {
            assert!(m.std_db[b].abs() < 1e-9);
            assert!((m.mean_db[b] - eq.values[b]).abs() < 1e-9);
        }
    }

    #[test]
    fn plus_minus_corpus_statistics() {
        let g = [6.0, -4.0, 3.0, 5.0, -6.0, 4.0];
        let mut irs = Vec::new();
        for _ in 0..5 {
            irs.push(filtered(g.to_vec()));
            irs.push(filtered(g.iter().map(|v| -v).collect()));
        }
        let m = fit_eq_distribution(&irs).unwrap();
        for b in 0..6 {
            assert!(m.mean_db[b].abs() < 0.5, "mean {}", m.mean_db[b]);
            assert!((m.std_db[b] / g[b].abs() - 1.0).abs() < 0.1, "std {} vs {}", m.std_db[b], g[b]);
        }
    }

    #[test]
    fn single_ir_cannot_be_fitted() {
        assert!(fit_eq_distribution(&[impulse()]).is_err());
    }

    #[test]
    fn eq_augment_reaches_target_on_impulse() {
        let model = EqDistribution::new(vec![6.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0; 6]).unwrap();
        let (out, target) = augment_eq(&impulse(), &model, 1.25, &mut item_rng(1, 0)).unwrap();
        let eq = extract_eq(&out, BandSet::Eq).unwrap();
        for (t, m) in target.values.iter().zip(&eq.values) {
            assert!((t - m).abs() < 1.5, "{t} vs {m}");
        }
    }

    #[test]
    fn eq_augment_toward_current_eq_is_identity() {
        let ir = noise_decay_ir(0.4, FS, 1.0, 3);
        let eq = extract_eq(&ir, BandSet::Eq).unwrap();
        let model = EqDistribution::new(eq.values.clone(), vec![0.0; 6]).unwrap();
        let (out, _) = augment_eq(&ir, &model, 1.0, &mut item_rng(1, 0)).unwrap();
        let delayed = ir.buffer().delayed(DEFAULT_TAPS / 2);
        let err: f64 = out.samples().iter().zip(delayed.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err / ir.buffer().energy() < 1e-3, "{err}");
    }

    #[test]
    fn eq_augment_is_deterministic() {
        let ir = noise_decay_ir(0.4, FS, 1.0, 3);
        let model = EqDistribution::new(vec![0.0; 6], vec![3.0; 6]).unwrap();
        let a = augment_eq(&ir, &model, 1.25, &mut item_rng(9, 4)).unwrap();
        let b = augment_eq(&ir, &model, 1.25, &mut item_rng(9, 4)).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn t60_retarget_to_source_is_identity() {
        let ir = noise_decay_ir(0.6, FS, 1.5, 5);
        let src = broadband_t60(&ir).unwrap().t60;
        assert_eq!(augment_t60(&ir, src).unwrap(), ir);
    }

    #[test]
    fn t60_retarget_closed_form() {
        for (src, tgt) in [(0.8, 0.4), (0.5, 1.5)] {
            let ir = noise_decay_ir(src, FS, 2.0 * src + 0.5, 11);
            let out = augment_t60(&ir, tgt).unwrap();
            let got = broadband_t60(&out).unwrap().t60;
            assert!((got / tgt - 1.0).abs() < 0.1, "{src}->{tgt}: {got}");
        }
    }

    #[test]
    fn t60_retarget_round_trip() {
        let ir = noise_decay_ir(0.7, FS, 2.0, 12);
        let orig = broadband_t60(&ir).unwrap().t60;
        let back = augment_t60(&augment_t60(&ir, 0.3).unwrap(), orig).unwrap();
        let got = broadband_t60(&back).unwrap().t60;
        assert!((got / orig - 1.0).abs() < 0.1, "{orig} -> {got}");
    }

    #[test]
    fn drr_closed_form() {
        let k = (0.010 * FS as f64) as usize;
        let mut s = vec![0.0; 1000];
        s[0] = 1.0;
        s[k] = 1.0;
        let ir = ImpulseResponse::from_samples(s, FS).unwrap();
        let out = augment_drr(&ir, 20.0).unwrap();
        assert!((out.samples()[0] - 10.0).abs() < 1e-9);
        assert_eq!(out.samples()[k], 1.0);
        assert_eq!(augment_drr(&ir, 0.0).unwrap(), ir);
    }

    #[test]
    fn drr_round_trip_on_room_ir() {
        let ir = tone_decay_ir(&[0.5; 7], FS, 2);
        for target in [-10.0, 0.0, 12.0] {
            let out = augment_drr(&ir, target).unwrap();
            assert!((compute_drr(&out).unwrap().db() - target).abs() < 0.5);
        }
    }

    #[test]
    fn drr_of_anechoic_is_error() {
        assert!(augment_drr(&impulse(), 0.0).is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_balanced() {
        let irs = vec![noise_decay_ir(0.6, FS, 1.4, 1)];
        let spec = AugmentationSpec {
            target_t60_range: (0.2, 1.0),
            t60_grid: 4,
            drr_range: (-5.0, 5.0),
            eq_model: EqDistribution::new(vec![0.0; 6], vec![0.0; 6]).unwrap(),
            eq_std_inflation: 1.25,
            seed: 42,
            count: 8,
        };
        let a = build_augmented_corpus(&irs, &spec).unwrap();
        let b = build_augmented_corpus(&irs, &spec).unwrap();
        assert_eq!(a.len(), 8);
        let la: Vec<_> = a.iter().map(|x| serde_json::to_string(&x.labels).unwrap()).collect();
        let lb: Vec<_> = b.iter().map(|x| serde_json::to_string(&x.labels).unwrap()).collect();
        assert_eq!(la, lb);
        let mut counts = [0; 4];
        for item in &a {
            counts[spec.bin_of(item.labels.target_t60).unwrap()] += 1;
            assert!((item.labels.t60_broadband / item.labels.target_t60 - 1.0).abs() < 0.1);
        }
        assert_eq!(counts, [2; 4]);
    }
}
