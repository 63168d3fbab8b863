//! End-to-end flows: T60 sweeps, acoustic matching against a reference,
//! and applying estimator predictions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_t60, extract_eq, ImpulseResponse};
use crate::bands::{BandProfile, BandSet};
use crate::error::{Error, Result};
use crate::geo::{PathRecord, Scene, TraceConfig};
use crate::matopt::{optimize_all_bands, FitOptions, MaterialFit};
use crate::synth::{apply_eq, synthesize_ir, EqFilterSpec};

/// Tracing horizon beyond the fit window of the longest target.
const TRACE_MARGIN_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub trace: TraceConfig,
    pub fit: FitOptions,
    pub sample_rate: u32,
    /// Seed of the synthesis sign pattern.
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            trace: TraceConfig::default(),
            fit: FitOptions::default(),
            sample_rate: 16_000,
            seed: 0,
        }
    }
}

/// A fitted scene with the paths it was fitted on.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub scene: Scene,
    pub paths: Vec<PathRecord>,
    pub fit: MaterialFit,
}

impl Fitted {
    pub fn synthesize(&self, sample_rate: u32, seed: u64) -> Result<ImpulseResponse> {
        synthesize_ir(&self.paths, &self.scene.room.materials, &self.scene.air, sample_rate, seed)
    }
}

/// Traces `scene` long enough for the targets and fits every band.
pub fn fit_scene(scene: &Scene, targets: &BandProfile, config: &SimulationConfig) -> Result<Fitted> {
    let longest = targets.filled()?.into_iter().fold(0.0, f64::max);
    let trace = TraceConfig {
        max_time: crate::matopt::FIT_SPAN_T60 * longest + TRACE_MARGIN_S,
        ..config.trace.clone()
    };
    let paths = scene.trace(&trace)?;
    let fit = optimize_all_bands(&paths, scene.room.n_materials(), targets, &scene.air, &config.fit)?;
    let room = scene.room.with_reflectivity(&fit.rho)?;
    Ok(Fitted {
        scene: Scene { room, ..scene.clone() },
        paths,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target: f64,
    /// Measured T60 per band; `None` where the fit was unreliable.
    pub measured: Vec<Option<f64>>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn max_relative_deviation(&self) -> Option<f64> {
        self.measured
            .iter()
            .flatten()
            .map(|m| (m / self.target - 1.0).abs())
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.max(d))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Largest relative deviation over all rows and reliable bands.
    pub fn max_relative_deviation(&self) -> Option<f64> {
        self.rows.iter().filter_map(SweepRow::max_relative_deviation).reduce(f64::max)
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none() && r.measured.iter().all(Option::is_some))
    }

    /// One line per (target, band) plus a final `max` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_t60,band_hz,measured_t60,relative_error,status\n");
        for r in &self.rows {
            for (b, &c) in BandSet::T60.centers().iter().enumerate() {
                let m = r.measured.get(b).copied().flatten();
                let (mv, dev) = m.map_or((String::new(), String::new()), |m| {
                    (format!("{m:.6}"), format!("{:.6}", m / r.target - 1.0))
                });
                let status = match (&r.error, m) {
                    (Some(_), _) => "failed",
                    (None, Some(_)) => "ok",
                    (None, None) => "unreliable",
                };
                let _ = writeln!(out, "{:.6},{c},{mv},{dev},{status}", r.target);
            }
        }
        let max = self.max_relative_deviation().map_or(String::new(), |d| format!("{d:.6}"));
        let _ = writeln!(out, "max,,,{max},{}", if self.all_ok() { "ok" } else { "incomplete" });
        out
    }
}

/// Evenly spaced targets from `lo` to `hi` inclusive.
pub fn sweep_targets(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn sweep_one(scene: &Scene, target: f64, config: &SimulationConfig) -> Result<Vec<Option<f64>>> {
    let fitted = fit_scene(scene, &BandProfile::uniform(BandSet::T60, target), config)?;
    let ir = fitted.synthesize(config.sample_rate, config.seed)?;
    let t = estimate_t60(&ir, BandSet::T60)?;
    Ok(t.values.iter().zip(&t.valid).map(|(&v, &ok)| ok.then_some(v)).collect())
}

/// For each target: fit a uniform target in every band, synthesize, and
/// re-measure. Failures are recorded per row.
pub fn run_sweep(scene: &Scene, lo: f64, hi: f64, steps: usize, config: &SimulationConfig) -> Result<SweepReport> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("sweep range ({lo}, {hi})")));
    }
    let rows = sweep_targets(lo, hi, steps)
        .into_iter()
        .map(|target| match sweep_one(scene, target, config) {
            Ok(measured) => SweepRow {
                target,
                measured,
                error: None,
            },
            Err(e) => {
                log::warn!("sweep target {target} s failed: {e}");
                SweepRow {
                    target,
                    measured: vec![None; BandSet::T60.len()],
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

/// What to match: a measured IR, or explicit band targets.
#[derive(Debug, Clone)]
pub enum Reference {
    Ir(ImpulseResponse),
    Targets { t60: BandProfile, eq: Option<BandProfile> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub reference_t60: BandProfile,
    pub reference_eq: Option<BandProfile>,
    pub simulated_t60: BandProfile,
    pub simulated_eq: BandProfile,
    pub eq_correction_db: Vec<f64>,
    pub final_t60: BandProfile,
    pub final_eq: BandProfile,
    /// |final − reference| per T60 band; `None` where either side is unreliable.
    pub t60_error_per_band: Vec<Option<f64>>,
    /// Mean of the per-band T60 errors, seconds.
    pub t60_error: f64,
    pub eq_error_per_band: Option<Vec<Option<f64>>>,
    /// Mean absolute per-band EQ difference, dB.
    pub eq_error: Option<f64>,
    pub fit: MaterialFit,
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub scene: Scene,
    /// Simulated IR after EQ correction.
    pub ir: ImpulseResponse,
    pub report: MatchReport,
}

fn band_errors(a: &BandProfile, b: &BandProfile) -> (Vec<Option<f64>>, f64) {
    let per: Vec<Option<f64>> = (0..a.values.len())
        .map(|i| (a.valid[i] && b.valid[i]).then(|| (a.values[i] - b.values[i]).abs()))
        .collect();
    let used: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if used.is_empty() {
        f64::NAN
    } else {
        used.iter().sum::<f64>() / used.len() as f64
    };
    (per, mean)
}

/// Fits the scene's materials to the reference T60s, synthesizes an IR,
/// and corrects its EQ toward the reference EQ (when one is known).
pub fn run_match(scene: &Scene, reference: &Reference, config: &SimulationConfig) -> Result<MatchOutput> {
    let (reference_t60, reference_eq) = match reference {
        Reference::Ir(ir) => (estimate_t60(ir, BandSet::T60)?, Some(extract_eq(ir, BandSet::Eq)?)),
        Reference::Targets { t60, eq } => (t60.clone(), eq.clone()),
    };
    if reference_t60.bands != BandSet::T60 || reference_eq.as_ref().is_some_and(|e| e.bands != BandSet::Eq) {
        return Err(Error::InvalidInput("reference profiles use the wrong band sets".into()));
    }
    let fitted = fit_scene(scene, &reference_t60, config)?;
    let ir = fitted.synthesize(config.sample_rate, config.seed)?;
    let simulated_t60 = estimate_t60(&ir, BandSet::T60)?;
    let simulated_eq = extract_eq(&ir, BandSet::Eq)?;
    let eq_correction_db: Vec<f64> = match &reference_eq {
        Some(r) => (0..r.values.len())
            .map(|i| {
                if r.valid[i] && simulated_eq.valid[i] {
                    r.values[i] - simulated_eq.values[i]
                } else {
                    0.0
                }
            })
            .collect(),
        None => vec![0.0; BandSet::Eq.len()],
    };
    let spec = EqFilterSpec::new(BandProfile::new(BandSet::Eq, eq_correction_db.clone())?)?;
    let ir = apply_eq(&ir, &spec)?;
    let final_t60 = estimate_t60(&ir, BandSet::T60)?;
    let final_eq = extract_eq(&ir, BandSet::Eq)?;
    let (t60_error_per_band, t60_error) = band_errors(&final_t60, &reference_t60);
    let (eq_error_per_band, eq_error) = match &reference_eq {
        Some(r) => {
            let (per, mean) = band_errors(&final_eq, r);
            (Some(per), Some(mean))
        }
        None => (None, None),
    };
    Ok(MatchOutput {
        scene: fitted.scene,
        ir,
        report: MatchReport {
            reference_t60,
            reference_eq,
            simulated_t60,
            simulated_eq,
            eq_correction_db,
            final_t60,
            final_eq,
            t60_error_per_band,
            t60_error,
            eq_error_per_band,
            eq_error,
            fit: fitted.fit,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    T60,
    Eq,
}

/// One estimator output as written by the prediction tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub head: Head,
    pub values: Vec<f64>,
    pub model_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_offsets: Option<Vec<f64>>,
}

/// Shortest T60 accepted from a prediction.
pub const MIN_PREDICTED_T60: f64 = 0.05;

/// Parses a single record or an array of records.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PredictionRecord),
        Many(Vec<PredictionRecord>),
    }
    let records = match serde_json::from_str::<OneOrMany>(text)? {
        OneOrMany::One(r) => vec![r],
        OneOrMany::Many(v) => v,
    };
    for r in &records {
        let want = match r.head {
            Head::T60 => BandSet::T60.len(),
            Head::Eq => BandSet::Eq.len(),
        };
        if r.values.len() != want {
            return Err(Error::InvalidInput(format!(
                "{}: {:?} prediction has {} values, expected {want}",
                r.example_id,
                r.head,
                r.values.len()
            )));
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{}: prediction value", r.example_id)));
        }
        if r.head == Head::T60 && r.values.iter().any(|&v| v < MIN_PREDICTED_T60) {
            return Err(Error::InvalidInput(format!(
                "{}: T60 prediction below {MIN_PREDICTED_T60} s",
                r.example_id
            )));
        }
    }
    Ok(records)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Turns predictions into match targets. With several records per head
/// (sliding windows) the per-band median is used. `example_id` selects
/// one example; otherwise all records must belong to the same one.
pub fn targets_from_predictions(records: &[PredictionRecord], example_id: Option<&str>) -> Result<Reference> {
    let chosen: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| example_id.is_none_or(|id| r.example_id == id))
        .collect();
    if chosen.is_empty() {
        return Err(Error::InvalidInput(match example_id {
            Some(id) => format!("no predictions for example {id}"),
            None => "prediction file is empty".into(),
        }));
    }
    if example_id.is_none() && chosen.iter().any(|r| r.example_id != chosen[0].example_id) {
        return Err(Error::InvalidInput(
            "predictions cover several examples; pick one with an example id".into(),
        ));
    }
    let merge = |head: Head, bands: BandSet| -> Result<Option<BandProfile>> {
        let rs: Vec<_> = chosen.iter().filter(|r| r.head == head).collect();
        if rs.is_empty() {
            return Ok(None);
        }
        let values = (0..bands.len()).map(|b| median(rs.iter().map(|r| r.values[b]).collect())).collect();
        BandProfile::new(bands, values).map(Some)
    };
    let t60 = merge(Head::T60, BandSet::T60)?
        .ok_or_else(|| Error::InvalidInput("predictions contain no T60 head".into()))?;
    Ok(Reference::Targets {
        t60,
        eq: merge(Head::Eq, BandSet::Eq)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{MaterialCoeffs, RoomModel};

    fn scene() -> Scene {
        let room = RoomModel::uniform_shoebox([5.0, 7.0, 3.0], MaterialCoeffs::uniform("w", 0.8).unwrap()).unwrap();
        Scene::new(room, [1.2, 1.5, 1.4], [3.6, 5.1, 1.7]).unwrap()
    }

    fn quick() -> SimulationConfig {
        SimulationConfig {
            trace: TraceConfig {
                n_rays: 5000,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn sweep_targets_are_inclusive() {
        assert_eq!(sweep_targets(0.5, 0.5, 2), vec![0.5, 0.5]);
        let t = sweep_targets(0.2, 1.5, 10);
        assert_eq!(t.len(), 10);
        assert!((t[9] - 1.5).abs() < 1e-12 && (t[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sweep_gives_identical_rows_and_parsable_csv() {
        let r = run_sweep(&scene(), 0.5, 0.5, 2, &quick()).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0], r.rows[1]);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 7 + 1);
        for l in &lines[1..15] {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 5);
            f[0].parse::<f64>().unwrap();
            f[1].parse::<f64>().unwrap();
        }
        assert!(lines[15].starts_with("max,"));
    }

    #[test]
    fn flat_targets_are_echoed() {
        let reference = Reference::Targets {
            t60: BandProfile::uniform(BandSet::T60, 0.5),
            eq: None,
        };
        let out = run_match(&scene(), &reference, &quick()).unwrap();
        assert_eq!(out.report.reference_t60, BandProfile::uniform(BandSet::T60, 0.5));
        assert!(out.report.eq_error.is_none());
        assert!(out.report.t60_error < 0.1, "{}", out.report.t60_error);
    }

    #[test]
    fn predictions_parse_and_merge() {
        let text = r#"[
            {"example_id": "a", "head": "t60", "values": [0.4,0.5,0.5,0.6,0.6,0.5,0.4], "model_hash": "x"},
            {"example_id": "a", "head": "t60", "values": [0.6,0.5,0.5,0.6,0.6,0.5,0.4], "model_hash": "x"},
            {"example_id": "a", "head": "t60", "values": [0.5,0.5,0.5,0.6,0.6,0.5,0.4], "model_hash": "x"},
            {"example_id": "a", "head": "eq", "values": [1,2,3,4,5,6], "model_hash": "y"}
        ]"#;
        let records = parse_predictions(text).unwrap();
        let back = parse_predictions(&serde_json::to_string(&records).unwrap()).unwrap();
        assert_eq!(records, back);
        match targets_from_predictions(&records, None).unwrap() {
            Reference::Targets { t60, eq } => {
                assert_eq!(t60.values[0], 0.5);
                assert_eq!(eq.unwrap().values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
            }
            _ => unreachable!(),
        }
        let one = r#"{"example_id": "b", "head": "t60", "values": [0.5,0.5,0.5,0.5,0.5,0.5,0.5], "model_hash": "x"}"#;
        assert_eq!(parse_predictions(one).unwrap().len(), 1);
        assert!(parse_predictions(&one.replace("0.5]", "0.01]")).is_err());
        assert!(parse_predictions(&one.replace(",0.5]", "]")).is_err());
        assert!(targets_from_predictions(&records, Some("zzz")).is_err());
    }
}
