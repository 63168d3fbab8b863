//! Labeled reverberant-speech datasets: feature tensors, manifests with
//! speaker- and IR-disjoint splits, and a synthetic speech stand-in.

use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_t60, extract_eq, ImpulseResponse};
use crate::augment::item_rng;
use crate::bands::{BandProfile, BandSet};
use crate::dsp::convolve::convolve_slices;
use crate::dsp::mel::{canonical_features, CANONICAL_MEL_BANDS, CANONICAL_SAMPLE_RATE};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::par;

pub const MANIFEST_VERSION: u32 = 1;
pub const CLIP_SECONDS: f64 = 4.0;
/// Minimum RMS of the dry speech window for it to count as active.
pub const ACTIVITY_THRESHOLD_DBFS: f64 = -45.0;
/// RMS the clean reverberant clip is scaled to before noise is added.
pub const CLIP_LEVEL_DBFS: f64 = -25.0;
pub const FEATURE_SHAPE: [usize; 2] = [CANONICAL_MEL_BANDS, 499];
const WINDOW_HOP_S: f64 = 0.1;

fn dbfs(x: &[f64]) -> f64 {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    10.0 * p.max(1e-30).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorHeader {
    shape: Vec<usize>,
    dtype: String,
    byte_order: String,
}

/// Row-major `f32` tensor stored as one JSON header line followed by the
/// little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidInput(format!("tensor shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = TensorHeader {
            shape: self.shape.clone(),
            dtype: "f32".into(),
            byte_order: "little".into(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::InvalidInput("tensor header line missing".into()))?;
        let header: TensorHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.dtype != "f32" || header.byte_order != "little" {
            return Err(Error::InvalidInput(format!(
                "unsupported tensor encoding {} / {}",
                header.dtype, header.byte_order
            )));
        }
        let payload = &bytes[nl + 1..];
        let n: usize = header.shape.iter().product();
        if payload.len() != 4 * n {
            return Err(Error::InvalidInput(format!(
                "tensor payload is {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                4 * n
            )));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self {
            shape: header.shape,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Measured labels of one IR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrLabels {
    pub t60: BandProfile,
    pub eq: BandProfile,
}

impl IrLabels {
    pub fn measure(ir: &ImpulseResponse) -> Result<Self> {
        Ok(Self {
            t60: estimate_t60(ir, BandSet::T60)?,
            eq: extract_eq(ir, BandSet::Eq)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureTensor,
    pub labels: IrLabels,
    /// Start of the 4 s window in the dry recording, in samples.
    pub window_start: usize,
    /// Clean clip power over injected noise power; `None` when noiseless.
    pub measured_snr_db: Option<f64>,
}

/// Builds one training example. `snr_db = +inf` gives a noiseless clip.
///
/// A window whose dry speech is active is picked at random, convolved with
/// `ir` (using the preceding speech as reverb history), scaled to
/// [`CLIP_LEVEL_DBFS`], mixed with a random noise excerpt at `snr_db`, and
/// turned into log-Mel features. Labels are measured on `ir`.
pub fn make_example(
    speech: &AudioBuffer,
    ir: &ImpulseResponse,
    noise: &AudioBuffer,
    snr_db: f64,
    clip_s: f64,
    rng: &mut impl Rng,
) -> Result<Example> {
    let labels = IrLabels::measure(ir)?;
    make_example_with_labels(speech, ir, noise, snr_db, clip_s, labels, rng)
}

fn make_example_with_labels(
    speech: &AudioBuffer,
    ir: &ImpulseResponse,
    noise: &AudioBuffer,
    snr_db: f64,
    clip_s: f64,
    labels: IrLabels,
    rng: &mut impl Rng,
) -> Result<Example> {
    let fs = speech.sample_rate();
    for other in [ir.sample_rate(), noise.sample_rate()] {
        if other != fs {
            return Err(Error::SampleRateMismatch { left: fs, right: other });
        }
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidInput(format!("SNR {snr_db} dB")));
    }
    let len = (clip_s * fs as f64).round() as usize;
    if len == 0 || speech.len() < len {
        return Err(Error::InvalidInput(format!(
            "speech of {:.2} s is shorter than the {clip_s} s clip",
            speech.duration_seconds()
        )));
    }
    let x = speech.samples();
    let hop = ((WINDOW_HOP_S * fs as f64) as usize).max(1);
    let active: Vec<usize> = (0..=(x.len() - len) / hop)
        .map(|k| k * hop)
        .filter(|&s| dbfs(&x[s..s + len]) >= ACTIVITY_THRESHOLD_DBFS)
        .collect();
    if active.is_empty() {
        return Err(Error::Unmeasurable(format!(
            "no {clip_s} s window of speech is above {ACTIVITY_THRESHOLD_DBFS} dBFS"
        )));
    }
    let start = active[rng.random_range(0..active.len())];

    let history = start.min(ir.len());
    let wet = convolve_slices(&x[start - history..start + len], ir.samples());
    let offset = history + ir.direct_index();
    let mut clip = wet[offset..offset + len].to_vec();
    let level = dbfs(&clip);
    if level <= -290.0 {
        return Err(Error::Unmeasurable("reverberant clip is silent".into()));
    }
    let gain = 10f64.powf((CLIP_LEVEL_DBFS - level) / 20.0);
    clip.iter_mut().for_each(|v| *v *= gain);

    let measured_snr_db = if snr_db.is_finite() {
        if noise.is_empty() || noise.energy() == 0.0 {
            return Err(Error::InvalidInput("noise signal is silent".into()));
        }
        let n = noise.samples();
        let from = rng.random_range(0..n.len());
        let mut excerpt: Vec<f64> = (0..len).map(|i| n[(from + i) % n.len()]).collect();
        let g = 10f64.powf((CLIP_LEVEL_DBFS - snr_db - dbfs(&excerpt)) / 20.0);
        excerpt.iter_mut().for_each(|v| *v *= g);
        let measured = dbfs(&clip) - dbfs(&excerpt);
        clip.iter_mut().zip(&excerpt).for_each(|(c, e)| *c += e);
        Some(measured)
    } else {
        None
    };

    let spec = canonical_features(&AudioBuffer::new(clip, fs)?)?;
    let features = FeatureTensor::new(spec.shape().to_vec(), spec.values.iter().map(|&v| v as f32).collect())?;
    Ok(Example {
        features,
        labels,
        window_start: start,
        measured_snr_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityMasks {
    pub t60: Vec<bool>,
    pub eq: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub features_path: String,
    pub tensor_shape: Vec<usize>,
    pub t60_labels: Vec<f64>,
    pub eq_labels: Vec<f64>,
    pub validity_masks: ValidityMasks,
    pub split: Split,
    pub speaker_id: String,
    pub ir_id: String,
    /// `None` for noiseless clips.
    pub snr_db: Option<f64>,
    pub window_start_s: f64,
}

/// Global mean and standard deviation of training-split feature values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub examples: Vec<ManifestEntry>,
    pub normalization: Normalization,
}

impl DatasetManifest {
    /// Checks that speakers and IRs never cross splits and every tensor
    /// has the canonical shape.
    pub fn validate(&self) -> Result<()> {
        use std::collections::BTreeMap;
        let mut speakers: BTreeMap<&str, Split> = BTreeMap::new();
        let mut irs: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.examples {
            if e.tensor_shape != FEATURE_SHAPE {
                return Err(Error::InvalidInput(format!("{}: tensor shape {:?}", e.id, e.tensor_shape)));
            }
            for (map, key, what) in [(&mut speakers, &e.speaker_id, "speaker"), (&mut irs, &e.ir_id, "IR")] {
                let s = *map.entry(key.as_str()).or_insert(e.split);
                if s != e.split {
                    return Err(Error::Infeasible(format!(
                        "{what} {key} appears in both {} and {}",
                        s.name(),
                        e.split.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::InvalidInput(format!("manifest version {} is not {MANIFEST_VERSION}", m.version)));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechRecording {
    pub speaker_id: String,
    pub audio: AudioBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedIr {
    pub id: String,
    pub ir: ImpulseResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 400,
            test: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Examples per split.
    pub counts: SplitCounts,
    /// Speakers per split; `None` divides the inventory 2/3, 1/6, 1/6.
    pub speaker_split: Option<SplitCounts>,
    /// IRs per split; same default as speakers.
    pub ir_split: Option<SplitCounts>,
    pub snr_range_db: (f64, f64),
    pub clip_s: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            counts: SplitCounts::default(),
            speaker_split: None,
            ir_split: None,
            snr_range_db: (10.0, 30.0),
            clip_s: CLIP_SECONDS,
            seed: 0,
        }
    }
}

fn default_partition(n: usize) -> SplitCounts {
    let val = n / 6;
    let test = n / 6;
    SplitCounts {
        train: n - val - test,
        val,
        test,
    }
}

/// Shuffles `n` inventory items and deals them into splits.
fn partition(n: usize, sizes: SplitCounts, demand: SplitCounts, what: &str, rng: &mut impl Rng) -> Result<[Vec<usize>; 3]> {
    if sizes.total() > n {
        return Err(Error::Infeasible(format!(
            "{what} split {}/{}/{} needs {} but only {n} are available",
            sizes.train,
            sizes.val,
            sizes.test,
            sizes.total()
        )));
    }
    for s in Split::ALL {
        if demand.get(s) > 0 && sizes.get(s) == 0 {
            return Err(Error::Infeasible(format!("{} split has examples but no {what}s", s.name())));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (a, rest) = order.split_at(sizes.train);
    let (b, rest) = rest.split_at(sizes.val);
    Ok([a.to_vec(), b.to_vec(), rest[..sizes.test].to_vec()])
}

/// Generates features and a manifest under `out_dir` (`manifest.json`,
/// `features/*.ft`). Speakers and IRs are dealt into disjoint splits;
/// examples that cannot be built are logged and skipped. An empty noise
/// corpus gives noiseless clips.
pub fn build_dataset(
    speech: &[SpeechRecording],
    irs: &[NamedIr],
    noise: &[AudioBuffer],
    config: &DatasetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let (lo, hi) = config.snr_range_db;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidInput(format!("SNR range ({lo}, {hi})")));
    }
    let mut speakers: Vec<&str> = speech.iter().map(|s| s.speaker_id.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();

    // IRs whose labels cannot be measured never enter the inventory
    let measured = par::map_slice(irs, |n| IrLabels::measure(&n.ir));
    let mut usable = Vec::new();
    for (n, m) in irs.iter().zip(measured) {
        match m {
            Ok(l) => usable.push((n, l)),
            Err(e) => warn!("IR {} dropped from dataset: {e}", n.id),
        }
    }

    let mut rng = item_rng(config.seed, u64::MAX);
    let speaker_sizes = config.speaker_split.unwrap_or_else(|| default_partition(speakers.len()));
    let ir_sizes = config.ir_split.unwrap_or_else(|| default_partition(usable.len()));
    let speaker_parts = partition(speakers.len(), speaker_sizes, config.counts, "speaker", &mut rng)?;
    let ir_parts = partition(usable.len(), ir_sizes, config.counts, "IR", &mut rng)?;

    let features_dir = out_dir.join("features");
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;

    let jobs: Vec<(Split, usize)> = Split::ALL
        .iter()
        .flat_map(|&s| (0..config.counts.get(s)).map(move |k| (s, k)))
        .collect();
    let results = par::map_slice(&jobs, |&(split, k)| -> Result<(ManifestEntry, f64, f64)> {
        let i = jobs_index(config.counts, split, k);
        let mut rng = item_rng(config.seed, i as u64);
        let sp = &speaker_parts[split as usize];
        let speaker = speakers[sp[rng.random_range(0..sp.len())]];
        let takes: Vec<&SpeechRecording> = speech.iter().filter(|s| s.speaker_id == speaker).collect();
        let rec = takes[rng.random_range(0..takes.len())];
        let ip = &ir_parts[split as usize];
        let (named, labels) = &usable[ip[rng.random_range(0..ip.len())]];
        let (snr, silence);
        let noise_buf = if noise.is_empty() {
            snr = f64::INFINITY;
            silence = AudioBuffer::zeros(0, rec.audio.sample_rate());
            &silence
        } else {
            snr = if lo < hi { rng.random_range(lo..hi) } else { lo };
            &noise[rng.random_range(0..noise.len())]
        };
        let ex = make_example_with_labels(&rec.audio, &named.ir, noise_buf, snr, config.clip_s, labels.clone(), &mut rng)?;
        let id = format!("{}_{k:05}", split.name());
        let rel = format!("features/{id}.ft");
        ex.features.write(out_dir.join(&rel))?;
        let sum: f64 = ex.features.data.iter().map(|&v| v as f64).sum();
        let sumsq: f64 = ex.features.data.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let entry = ManifestEntry {
            id,
            features_path: rel,
            tensor_shape: ex.features.shape.clone(),
            t60_labels: ex.labels.t60.values.clone(),
            eq_labels: ex.labels.eq.values.clone(),
            validity_masks: ValidityMasks {
                t60: ex.labels.t60.valid.clone(),
                eq: ex.labels.eq.valid.clone(),
            },
            split,
            speaker_id: speaker.to_string(),
            ir_id: named.id.clone(),
            snr_db: ex.measured_snr_db.map(|_| snr),
            window_start_s: ex.window_start as f64 / rec.audio.sample_rate() as f64,
        };
        Ok((entry, sum, sumsq))
    });

    let mut examples = Vec::with_capacity(jobs.len());
    let (mut sum, mut sumsq, mut count) = (0.0, 0.0, 0usize);
    for ((split, k), r) in jobs.iter().zip(results) {
        match r {
            Ok((entry, s, s2)) => {
                if entry.split == Split::Train {
                    sum += s;
                    sumsq += s2;
                    count += entry.tensor_shape.iter().product::<usize>();
                }
                examples.push(entry);
            }
            Err(e) => warn!("{} example {k} skipped: {e}", split.name()),
        }
    }
    let normalization = if count > 0 {
        let mean = sum / count as f64;
        Normalization {
            mean,
            std: (sumsq / count as f64 - mean * mean).max(0.0).sqrt(),
        }
    } else {
        Normalization { mean: 0.0, std: 1.0 }
    };
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        examples,
        normalization,
    };
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn jobs_index(counts: SplitCounts, split: Split, k: usize) -> usize {
    match split {
        Split::Train => k,
        Split::Val => counts.train + k,
        Split::Test => counts.train + counts.val + k,
    }
}

/// Second-order resonator (bandwidth `bw` Hz) applied in place.
fn resonate(x: &mut [f64], f: f64, bw: f64, fs: f64) {
    let r = (-std::f64::consts::PI * bw / fs).exp();
    let a1 = 2.0 * r * (2.0 * std::f64::consts::PI * f / fs).cos();
    let a2 = -r * r;
    let g = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = g * *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

// F1, F2, F3 of a few vowels (adult male reference)
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];

/// Synthetic speech-like recording: syllables of formant-filtered glottal
/// pulse trains with a per-speaker pitch and vocal-tract scale, separated
/// by pauses and light breath noise.
pub fn synth_speech(speaker: u64, seconds: f64, sample_rate: u32, seed: u64) -> AudioBuffer {
    let fs = sample_rate as f64;
    let mut rng = item_rng(seed, speaker);
    let f0_base = rng.random_range(90.0..240.0);
    let tract = rng.random_range(0.85..1.2);
    let total = (seconds * fs).ceil() as usize;
    let breath = Normal::new(0.0, 0.002).unwrap();
    let aspiration = Normal::new(0.0, 0.02).unwrap();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let pause = (rng.random_range(0.04..0.35) * fs) as usize;
        out.extend((0..pause).map(|_| breath.sample(&mut rng)));
        let n = (rng.random_range(0.12..0.35) * fs) as usize;
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let f0 = f0_base * rng.random_range(0.85..1.2);
        let glide = rng.random_range(-0.25..0.15);
        let mut syl = vec![0.0; n];
        let mut phase = 0.0;
        for (i, s) in syl.iter_mut().enumerate() {
            let f = f0 * (1.0 + glide * i as f64 / n as f64);
            phase += f / fs;
            if phase >= 1.0 {
                phase -= 1.0;
                *s = 1.0;
            }
            *s += aspiration.sample(&mut rng);
        }
        let mut voiced = vec![0.0; n];
        for (k, (&f, bw)) in vowel.iter().zip([80.0, 100.0, 140.0]).enumerate() {
            let mut y = syl.clone();
            resonate(&mut y, (f * tract).min(0.45 * fs), bw, fs);
            resonate(&mut y, (f * tract).min(0.45 * fs), bw, fs);
            let w = [1.0, 0.5, 0.25][k];
            voiced.iter_mut().zip(&y).for_each(|(v, s)| *v += w * s);
        }
        // raised-cosine syllable envelope
        for (i, v) in voiced.iter_mut().enumerate() {
            *v *= 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
        }
        out.extend(voiced);
    }
    out.truncate(total);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioBuffer::from_trusted(out, sample_rate)
}

/// One synthetic recording per speaker, `minutes_each` long, at the
/// canonical feature rate. Speaker ids are `spk000`, `spk001`, ...
pub fn synth_speech_corpus(n_speakers: usize, minutes_each: f64, seed: u64) -> Vec<SpeechRecording> {
    let items: Vec<u64> = (0..n_speakers as u64).collect();
    par::map_slice(&items, |&s| SpeechRecording {
        speaker_id: format!("spk{s:03}"),
        audio: synth_speech(s, minutes_each * 60.0, CANONICAL_SAMPLE_RATE, seed),
    })
}

/// Gaussian white noise with unit variance.
pub fn white_noise(seconds: f64, sample_rate: u32, seed: u64) -> AudioBuffer {
    let mut rng = item_rng(seed, 0);
    let n = Normal::new(0.0, 1.0).unwrap();
    let len = (seconds * sample_rate as f64).ceil() as usize;
    AudioBuffer::from_trusted((0..len).map(|_| n.sample(&mut rng)).collect(), sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::spectrum::octave_band_power_db;
    use crate::synthetic::noise_decay_ir;
    use rand::SeedableRng;

    const FS: u32 = 16000;

    fn corpus_irs(n: usize) -> Vec<NamedIr> {
        (0..n)
            .map(|i| NamedIr {
                id: format!("ir{i}"),
                ir: noise_decay_ir(0.3 + 0.1 * i as f64, FS, 1.0, i as u64),
            })
            .collect()
    }

    #[test]
    fn tensor_round_trip() {
        let t = FeatureTensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, 1e9]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ft");
        t.write(&p).unwrap();
        assert_eq!(FeatureTensor::read(&p).unwrap(), t);
        let bytes = t.to_bytes();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(bytes.len() - nl - 1, 6 * 4);
        assert!(std::str::from_utf8(&bytes[..nl]).unwrap().contains("\"byte_order\":\"little\""));
        assert!(FeatureTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(FeatureTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn speakers_have_distinct_spectra() {
        let a = synth_speech(0, 10.0, FS, 7);
        let b = synth_speech(1, 10.0, FS, 7);
        assert_eq!(a, synth_speech(0, 10.0, FS, 7));
        assert!(a.duration_seconds() >= 10.0);
        // long-term spectrum on 1/3-octave-ish bins
        let centers: Vec<f64> = (0..18).map(|k| 100.0 * 2f64.powf(k as f64 / 3.0)).collect();
        let sa: Vec<f64> = octave_band_power_db(a.samples(), FS, &centers).into_iter().map(Option::unwrap).collect();
        let sb: Vec<f64> = octave_band_power_db(b.samples(), FS, &centers).into_iter().map(Option::unwrap).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&sa), mean(&sb));
        let cov: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = sa.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = sb.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr < 0.99, "{corr}");
    }

    #[test]
    fn example_snr_and_shape() {
        let speech = synth_speech(3, 12.0, FS, 1);
        let ir = noise_decay_ir(0.5, FS, 0.8, 2);
        let noise = white_noise(3.0, FS, 3);
        for snr in [5.0, 20.0] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
            let ex = make_example(&speech, &ir, &noise, snr, CLIP_SECONDS, &mut rng).unwrap();
            assert_eq!(ex.features.shape, FEATURE_SHAPE);
            assert!((ex.measured_snr_db.unwrap() - snr).abs() < 0.5);
            assert_eq!(ex.labels.t60, estimate_t60(&ir, BandSet::T60).unwrap());
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let quiet = make_example(&speech, &ir, &noise, f64::INFINITY, CLIP_SECONDS, &mut rng).unwrap();
        assert!(quiet.measured_snr_db.is_none());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let again = make_example(&speech, &ir, &noise, f64::INFINITY, CLIP_SECONDS, &mut rng).unwrap();
        assert_eq!(quiet.features.to_bytes(), again.features.to_bytes());
    }

    #[test]
    fn silent_speech_is_rejected() {
        let speech = AudioBuffer::new(vec![1e-4; 5 * FS as usize], FS).unwrap();
        let ir = noise_decay_ir(0.5, FS, 0.8, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(make_example(&speech, &ir, &speech, f64::INFINITY, CLIP_SECONDS, &mut rng).is_err());
        let short = synth_speech(0, 3.0, FS, 0);
        assert!(make_example(&short, &ir, &short, 10.0, CLIP_SECONDS, &mut rng).is_err());
    }

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            counts: SplitCounts {
                train: 8,
                val: 2,
                test: 2,
            },
            speaker_split: Some(SplitCounts {
                train: 8,
                val: 2,
                test: 2,
            }),
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_splits_are_disjoint_and_deterministic() {
        let speech = synth_speech_corpus(12, 0.1, 5);
        let irs = corpus_irs(6);
        let noise = vec![white_noise(5.0, FS, 1)];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = build_dataset(&speech, &irs, &noise, &small_config(), a.path()).unwrap();
        build_dataset(&speech, &irs, &noise, &small_config(), b.path()).unwrap();
        assert_eq!(m.examples.len(), 12);
        m.validate().unwrap();
        let bytes = |d: &Path| fs::read(d.join("manifest.json")).unwrap();
        assert_eq!(bytes(a.path()), bytes(b.path()));

        // label honesty
        for e in &m.examples {
            let ir = &irs.iter().find(|n| n.id == e.ir_id).unwrap().ir;
            assert_eq!(e.t60_labels, estimate_t60(ir, BandSet::T60).unwrap().values);
        }

        // normalized training features have zero mean and unit spread
        let mut vals = Vec::new();
        for e in m.split(Split::Train) {
            let t = FeatureTensor::read(a.path().join(&e.features_path)).unwrap();
            assert_eq!(t.shape, FEATURE_SHAPE);
            vals.extend(t.data.iter().map(|&v| (v as f64 - m.normalization.mean) / m.normalization.std));
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 0.01 && (std - 1.0).abs() < 0.01, "{mean} {std}");
    }

    #[test]
    fn infeasible_split_is_reported() {
        let speech = synth_speech_corpus(3, 0.1, 5);
        let irs = corpus_irs(3);
        let dir = tempfile::tempdir().unwrap();
        let err = build_dataset(&speech, &irs, &[], &small_config(), dir.path()).unwrap_err();
        assert!(err.to_string().contains("speaker"), "{err}");
    }

    #[test]
    fn crossing_speaker_fails_validation() {
        let mut m = DatasetManifest {
            version: MANIFEST_VERSION,
            examples: Vec::new(),
            normalization: Normalization { mean: 0.0, std: 1.0 },
        };
        for (i, split) in [Split::Train, Split::Test].into_iter().enumerate() {
            m.examples.push(ManifestEntry {
                id: format!("e{i}"),
                features_path: String::new(),
                tensor_shape: FEATURE_SHAPE.to_vec(),
                t60_labels: vec![0.5; 7],
                eq_labels: vec![0.0; 6],
                validity_masks: ValidityMasks {
                    t60: vec![true; 7],
                    eq: vec![true; 6],
                },
                split,
                speaker_id: "s".into(),
                ir_id: format!("ir{i}"),
                snr_db: None,
                window_start_s: 0.0,
            });
        }
        assert!(m.validate().is_err());
    }
}
