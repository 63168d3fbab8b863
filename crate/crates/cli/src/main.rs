use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use roomrelight::acceptance::{self, AcceptanceOptions};
use roomrelight::analysis::{compute_drr, estimate_t60_detail, extract_eq, Drr, ImpulseResponse};
use roomrelight::augment::{build_augmented_corpus, fit_eq_distribution, AugmentationSpec, DEFAULT_EQ_STD_INFLATION};
use roomrelight::bands::{BandProfile, BandSet};
use roomrelight::dataset::{self, DatasetConfig, NamedIr, SpeechRecording, SplitCounts};
use roomrelight::dsp::{read_wav, write_wav, AudioBuffer, WavFormat};
use roomrelight::geo::{Scene, TraceConfig};
use roomrelight::matopt::FitOptions;
use roomrelight::pipeline::{
    fit_scene, parse_predictions, run_match, run_sweep, targets_from_predictions, MatchOutput, Reference,
    SimulationConfig,
};
use roomrelight::synth::{apply_eq, db_envelope, render, synthesize_ir, EqFilterSpec};
use roomrelight::synthetic::synthetic_corpus;

const THREADS_ENV: &str = "ROOMRELIGHT_THREADS";

#[derive(Debug, Parser, Serialize)]
#[command(name = "roomrelight", version, about = "Room acoustics estimation, augmentation and material fitting")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (also capped by ROOMRELIGHT_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Per-band T60, EQ and DRR of an impulse response.
    AnalyzeIr(AnalyzeArgs),
    /// Expand an IR corpus along T60, DRR and EQ.
    Augment(AugmentArgs),
    /// Trace a room and synthesize its impulse response.
    SimulateIr(SimulateArgs),
    /// Fit material reflectivities to target T60s.
    Optimize(OptimizeArgs),
    /// Fit, synthesize and re-measure over a range of uniform targets.
    Sweep(SweepArgs),
    /// Match a room to a reference IR or targets and render dry audio.
    Match(MatchArgs),
    /// Render dry audio through a room as it is.
    Render(RenderArgs),
    /// Build a labeled reverberant-speech feature dataset.
    Dataset(DatasetArgs),
    /// Run the acceptance suite.
    Bench(BenchArgs),
    /// Use estimator predictions as matching targets.
    PredictionsApply(PredictionsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BandChoice {
    T60,
    Eq,
    All,
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    ir: PathBuf,
    #[arg(long, value_enum, default_value_t = BandChoice::All)]
    bands: BandChoice,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args, Serialize)]
struct TraceArgs {
    #[arg(long, default_value_t = 20_000)]
    rays: usize,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
}

impl TraceArgs {
    fn simulation(&self, seed: u64) -> SimulationConfig {
        SimulationConfig {
            trace: TraceConfig {
                n_rays: self.rays,
                seed,
                ..Default::default()
            },
            fit: FitOptions::default(),
            sample_rate: self.sample_rate,
            seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct AugmentArgs {
    /// Directory of source IR WAV files.
    #[arg(long, required_unless_present = "synthetic")]
    input_dir: Option<PathBuf>,
    /// Use this many synthetic source IRs instead of an input directory.
    #[arg(long, conflicts_with = "input_dir")]
    synthetic: Option<usize>,
    /// AugmentationSpec JSON; flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0.1)]
    t60_lo: f64,
    #[arg(long, default_value_t = 1.5)]
    t60_hi: f64,
    #[arg(long, default_value_t = 14)]
    grid: usize,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    drr_lo: f64,
    #[arg(long, default_value_t = 12.0, allow_hyphen_values = true)]
    drr_hi: f64,
    #[arg(long, default_value_t = DEFAULT_EQ_STD_INFLATION)]
    inflation: f64,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    room: PathBuf,
    #[command(flatten)]
    trace: TraceArgs,
    /// Longest propagation time to trace, seconds.
    #[arg(long, default_value_t = 2.0)]
    max_time: f64,
    /// Also write the per-band dB envelope as CSV.
    #[arg(long)]
    db_envelope: bool,
}

#[derive(Debug, Args, Serialize)]
struct OptimizeArgs {
    #[arg(long)]
    room: PathBuf,
    /// Targets JSON: {"t60": [7 values], "valid": [7 flags]?}.
    #[arg(long, required_unless_present = "from_ir", conflicts_with = "from_ir")]
    targets: Option<PathBuf>,
    /// Measure targets from this IR instead.
    #[arg(long)]
    from_ir: Option<PathBuf>,
    #[command(flatten)]
    trace: TraceArgs,
    /// Write per-iteration objective and gradient norm as CSV.
    #[arg(long)]
    trace_csv: bool,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    room: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    t60_lo: f64,
    #[arg(long, default_value_t = 1.5)]
    t60_hi: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[command(flatten)]
    trace: TraceArgs,
}

#[derive(Debug, Args, Serialize)]
struct MatchArgs {
    #[arg(long)]
    room: PathBuf,
    /// Reference impulse response.
    #[arg(long, required_unless_present = "targets", conflicts_with = "targets")]
    reference: Option<PathBuf>,
    /// Targets JSON: {"t60": [7], "valid": [7]?, "eq": [6]?}.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Dry audio to render through the matched room.
    #[arg(long)]
    dry: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    wet_gain: f64,
    #[command(flatten)]
    trace: TraceArgs,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    room: PathBuf,
    #[arg(long)]
    dry: PathBuf,
    /// EQ JSON: {"gains_db": [6 values]}.
    #[arg(long)]
    eq: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    wet_gain: f64,
    #[arg(long, default_value_t = 2.0)]
    max_time: f64,
    #[arg(long, default_value_t = 20_000)]
    rays: usize,
}

#[derive(Debug, Args, Serialize)]
struct DatasetArgs {
    /// Directory of speech WAVs named `<speaker>_<anything>.wav`.
    #[arg(long)]
    speech_dir: Option<PathBuf>,
    /// Synthetic speakers to generate when no speech directory is given.
    #[arg(long, default_value_t = 12)]
    speakers: usize,
    #[arg(long, default_value_t = 1.0)]
    minutes: f64,
    /// Directory of IR WAVs; otherwise a synthetic corpus is used.
    #[arg(long)]
    ir_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    synthetic_irs: usize,
    /// Directory of noise WAVs; otherwise white noise.
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    /// Disable noise entirely.
    #[arg(long)]
    noiseless: bool,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 400)]
    val: usize,
    #[arg(long, default_value_t = 400)]
    test: usize,
    #[arg(long, default_value_t = 10.0)]
    snr_lo: f64,
    #[arg(long, default_value_t = 30.0)]
    snr_hi: f64,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Run only criteria whose name contains this.
    #[arg(long)]
    filter: Option<String>,
    /// Add the informative 1.5-2.5 s sweep.
    #[arg(long)]
    extended: bool,
}

#[derive(Debug, Args, Serialize)]
struct PredictionsArgs {
    #[arg(long)]
    room: PathBuf,
    /// Prediction JSON (one record or an array).
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    example_id: Option<String>,
    #[arg(long)]
    dry: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    wet_gain: f64,
    #[command(flatten)]
    trace: TraceArgs,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsFile {
    t60: Vec<f64>,
    #[serde(default)]
    valid: Option<Vec<bool>>,
    #[serde(default)]
    eq: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EqFile {
    gains_db: Vec<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_ir(path: &Path) -> Result<ImpulseResponse> {
    let buf = read_wav(path)?;
    Ok(ImpulseResponse::new(buf)?)
}

fn load_scene(path: &Path) -> Result<Scene> {
    Ok(Scene::load(path)?)
}

fn load_targets(path: &Path) -> Result<Reference> {
    let file: TargetsFile =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("bad targets file {}", path.display()))?;
    let mut t60 = BandProfile::new(BandSet::T60, file.t60)?;
    if let Some(v) = file.valid {
        t60 = t60.with_mask(v)?;
    }
    let eq = file.eq.map(|e| BandProfile::new(BandSet::Eq, e)).transpose()?;
    Ok(Reference::Targets { t60, eq })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no WAV files in {}", dir.display());
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn drr_json(d: Drr) -> serde_json::Value {
    match d {
        Drr::Db(v) => serde_json::json!(v),
        Drr::Anechoic => serde_json::json!("anechoic"),
    }
}

fn profile_json(p: &BandProfile) -> serde_json::Value {
    serde_json::json!({ "centers": p.centers(), "values": p.values, "valid": p.valid })
}

fn analysis_json(ir: &ImpulseResponse, bands: BandChoice) -> Result<serde_json::Value> {
    let mut out = serde_json::json!({
        "sample_rate": ir.sample_rate(),
        "length": ir.len(),
        "direct_index": ir.direct_index(),
        "drr_db": drr_json(compute_drr(ir)?),
    });
    if matches!(bands, BandChoice::T60 | BandChoice::All) {
        let detail = estimate_t60_detail(ir, BandSet::T60)?;
        out["t60"] = serde_json::json!({
            "centers": BandSet::T60.centers(),
            "values": detail.iter().map(|d| d.fit.as_ref().map(|f| f.t60)).collect::<Vec<_>>(),
            "valid": detail.iter().map(|d| d.fit.is_some()).collect::<Vec<_>>(),
            "notes": detail.iter().map(|d| d.reason.clone()).collect::<Vec<_>>(),
        });
    }
    if matches!(bands, BandChoice::Eq | BandChoice::All) {
        out["eq"] = profile_json(&extract_eq(ir, BandSet::Eq)?);
    }
    Ok(out)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let ir = load_ir(&a.ir)?;
    let report = analysis_json(&ir, a.bands)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let drr = match compute_drr(&ir)? {
        Drr::Db(v) => format!("{v:.2} dB"),
        Drr::Anechoic => "anechoic".into(),
    };
    println!("direct arrival {:.4} s, DRR {drr}", ir.direct_time());
    for key in ["t60", "eq"] {
        let Some(p) = report.get(key) else { continue };
        let unit = if key == "t60" { "s" } else { "dB" };
        println!("{key}:");
        let centers = p["centers"].as_array().cloned().unwrap_or_default();
        for (i, c) in centers.iter().enumerate() {
            let v = &p["values"][i];
            let mark = if p["valid"][i].as_bool() == Some(true) { "" } else { "  (unreliable)" };
            match v.as_f64() {
                Some(v) => println!("  {:>7} Hz  {v:8.3} {unit}{mark}", c.to_string()),
                None => println!("  {:>7} Hz  {:>8}{mark}", c.to_string(), "-"),
            }
        }
    }
    Ok(())
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let (names, sources): (Vec<String>, Vec<ImpulseResponse>) = match (&a.input_dir, a.synthetic) {
        (Some(dir), _) => {
            let files = wav_files(dir)?;
            let irs = files.iter().map(|p| load_ir(p)).collect::<Result<Vec<_>>>()?;
            (files.iter().map(|p| stem(p)).collect(), irs)
        }
        (None, Some(n)) => {
            let irs = synthetic_corpus(n, (0.3, 1.0), 2.0, 16_000, cli.seed)?;
            ((0..n).map(|i| format!("synthetic{i:04}")).collect(), irs)
        }
        (None, None) => bail!("give --input-dir or --synthetic"),
    };
    let spec = match &a.spec {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("bad spec {}", p.display()))?,
        None => AugmentationSpec {
            target_t60_range: (a.t60_lo, a.t60_hi),
            t60_grid: a.grid,
            drr_range: (a.drr_lo, a.drr_hi),
            eq_model: fit_eq_distribution(&sources)?,
            eq_std_inflation: a.inflation,
            seed: cli.seed,
            count: a.count,
        },
    };
    info!("augmentation spec {}", serde_json::to_string(&spec)?);
    let corpus = build_augmented_corpus(&sources, &spec)?;
    write_json(&cli.output_dir.join("augment_spec.json"), &spec)?;
    for item in &corpus {
        let base = cli.output_dir.join(format!("aug_{:05}", item.index));
        write_wav(base.with_extension("wav"), item.ir.buffer(), WavFormat::Float32)?;
        let mut labels = serde_json::to_value(&item.labels)?;
        labels["source"] = serde_json::json!(names[item.labels.source_index]);
        write_json(&base.with_extension("json"), &labels)?;
    }
    eprintln!("wrote {} of {} augmented IRs to {}", corpus.len(), spec.count, cli.output_dir.display());
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let scene = load_scene(&a.room)?;
    let mut sim = a.trace.simulation(cli.seed);
    sim.trace.max_time = a.max_time;
    let paths = scene.trace(&sim.trace)?;
    let ir = synthesize_ir(&paths, &scene.room.materials, &scene.air, sim.sample_rate, sim.seed)?;
    write_wav(cli.output_dir.join("ir.wav"), ir.buffer(), WavFormat::Float32)?;
    let mut report = analysis_json(&ir, BandChoice::All)?;
    report["paths"] = serde_json::json!(paths.len());
    write_json(&cli.output_dir.join("ir_analysis.json"), &report)?;
    if a.db_envelope {
        let mut csv = String::from("time_s");
        for c in BandSet::T60.centers() {
            csv.push_str(&format!(",db_{c}"));
        }
        csv.push('\n');
        for (t, row) in db_envelope(&ir, 0.01)? {
            csv.push_str(&format!("{t:.4}"));
            for v in row {
                csv.push_str(&format!(",{v:.3}"));
            }
            csv.push('\n');
        }
        let p = cli.output_dir.join("envelope.csv");
        fs::write(&p, csv).with_context(|| format!("cannot write {}", p.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn optimize(cli: &Cli, a: &OptimizeArgs) -> Result<()> {
    let scene = load_scene(&a.room)?;
    let targets = match (&a.targets, &a.from_ir) {
        (Some(p), _) => match load_targets(p)? {
            Reference::Targets { t60, .. } => t60,
            Reference::Ir(_) => unreachable!(),
        },
        (None, Some(p)) => roomrelight::estimate_t60(&load_ir(p)?, BandSet::T60)?,
        (None, None) => bail!("give --targets or --from-ir"),
    };
    let fitted = fit_scene(&scene, &targets, &a.trace.simulation(cli.seed))?;
    fitted.scene.save(cli.output_dir.join("room_fitted.json"))?;
    let report = serde_json::json!({
        "targets": profile_json(&targets),
        "all_ok": fitted.fit.all_ok(),
        "bands": fitted.fit.bands.iter().map(|b| serde_json::json!({
            "center": b.center,
            "target_t60": b.target_t60,
            "target_was_valid": b.target_was_valid,
            "slope_target_t60": b.slope_target_t60,
            "converged": b.result.as_ref().map(|r| r.converged),
            "objective": b.result.as_ref().map(|r| r.objective),
            "iterations": b.result.as_ref().map(|r| r.iterations),
            "error": b.error,
        })).collect::<Vec<_>>(),
        "reflectivity": fitted.scene.room.materials.iter().map(|m| (m.name.clone(), m.reflectivity)).collect::<std::collections::BTreeMap<_, _>>(),
    });
    write_json(&cli.output_dir.join("optimize_report.json"), &report)?;
    if a.trace_csv {
        let mut csv = String::from("band_hz,iteration,objective,max_projected_gradient\n");
        for b in &fitted.fit.bands {
            if let Some(r) = &b.result {
                for (i, (j, g)) in r.trace.iter().enumerate() {
                    csv.push_str(&format!("{},{i},{j:e},{g:e}\n", b.center));
                }
            }
        }
        let p = cli.output_dir.join("optimize_trace.csv");
        fs::write(&p, csv).with_context(|| format!("cannot write {}", p.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !fitted.fit.all_ok() {
        bail!("some bands could not be fitted");
    }
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let scene = load_scene(&a.room)?;
    let report = run_sweep(&scene, a.t60_lo, a.t60_hi, a.steps, &a.trace.simulation(cli.seed))?;
    let csv = report.to_csv();
    let p = cli.output_dir.join("sweep.csv");
    fs::write(&p, &csv).with_context(|| format!("cannot write {}", p.display()))?;
    print!("{csv}");
    Ok(())
}

fn finish_match(cli: &Cli, out: &MatchOutput, dry: Option<&Path>, wet_gain: f64, prefix: &str) -> Result<()> {
    out.scene.save(cli.output_dir.join(format!("{prefix}room_fitted.json")))?;
    write_wav(cli.output_dir.join(format!("{prefix}ir.wav")), out.ir.buffer(), WavFormat::Float32)?;
    let mut report = serde_json::to_value(&out.report)?;
    if let Some(dry) = dry {
        let dry = read_wav(dry)?;
        let (wet, r) = render(&dry, &out.ir, wet_gain)?;
        write_wav(cli.output_dir.join(format!("{prefix}wet.wav")), &wet, WavFormat::Float32)?;
        report["render"] = serde_json::to_value(r)?;
    }
    write_json(&cli.output_dir.join(format!("{prefix}report.json")), &report)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "t60_error_s": out.report.t60_error,
            "t60_error_per_band": out.report.t60_error_per_band,
            "eq_error_db": out.report.eq_error,
            "eq_error_per_band": out.report.eq_error_per_band,
        }))?
    );
    Ok(())
}

fn do_match(cli: &Cli, a: &MatchArgs) -> Result<()> {
    let scene = load_scene(&a.room)?;
    let reference = match (&a.reference, &a.targets) {
        (Some(p), _) => Reference::Ir(load_ir(p)?),
        (None, Some(p)) => load_targets(p)?,
        (None, None) => bail!("give --reference or --targets"),
    };
    let out = run_match(&scene, &reference, &a.trace.simulation(cli.seed))?;
    finish_match(cli, &out, a.dry.as_deref(), a.wet_gain, "match_")
}

fn do_render(cli: &Cli, a: &RenderArgs) -> Result<()> {
    let scene = load_scene(&a.room)?;
    let dry = read_wav(&a.dry)?;
    let cfg = TraceConfig {
        n_rays: a.rays,
        max_time: a.max_time,
        seed: cli.seed,
        ..Default::default()
    };
    let paths = scene.trace(&cfg)?;
    let mut ir = synthesize_ir(&paths, &scene.room.materials, &scene.air, dry.sample_rate(), cli.seed)?;
    if let Some(p) = &a.eq {
        let file: EqFile = serde_json::from_str(&read_text(p)?).with_context(|| format!("bad EQ file {}", p.display()))?;
        ir = apply_eq(&ir, &EqFilterSpec::new(BandProfile::new(BandSet::Eq, file.gains_db)?)?)?;
    }
    let (wet, report) = render(&dry, &ir, a.wet_gain)?;
    write_wav(cli.output_dir.join("wet.wav"), &wet, WavFormat::Float32)?;
    write_json(&cli.output_dir.join("render_report.json"), &report)?;
    Ok(())
}

fn resample_to(buf: AudioBuffer, rate: u32) -> Result<AudioBuffer> {
    Ok(if buf.sample_rate() == rate { buf } else { buf.resampled(rate)? })
}

fn do_dataset(cli: &Cli, a: &DatasetArgs) -> Result<()> {
    let rate = roomrelight::dsp::mel::CANONICAL_SAMPLE_RATE;
    let speech = match &a.speech_dir {
        Some(dir) => wav_files(dir)?
            .iter()
            .map(|p| {
                let name = stem(p);
                let speaker_id = name.split('_').next().unwrap_or(&name).to_string();
                let audio = resample_to(read_wav(p)?, rate)?;
                Ok(SpeechRecording { speaker_id, audio })
            })
            .collect::<Result<Vec<_>>>()?,
        None => dataset::synth_speech_corpus(a.speakers, a.minutes, cli.seed),
    };
    let irs = match &a.ir_dir {
        Some(dir) => wav_files(dir)?
            .iter()
            .map(|p| {
                let buf = resample_to(read_wav(p)?, rate)?;
                Ok(NamedIr {
                    id: stem(p),
                    ir: ImpulseResponse::new(buf)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => synthetic_corpus(a.synthetic_irs, (0.2, 1.2), 3.0, rate, cli.seed)?
            .into_iter()
            .enumerate()
            .map(|(i, ir)| NamedIr {
                id: format!("ir{i:04}"),
                ir,
            })
            .collect(),
    };
    let noise = if a.noiseless {
        Vec::new()
    } else {
        match &a.noise_dir {
            Some(dir) => wav_files(dir)?
                .iter()
                .map(|p| resample_to(read_wav(p)?, rate))
                .collect::<Result<Vec<_>>>()?,
            None => vec![dataset::white_noise(30.0, rate, cli.seed)],
        }
    };
    let config = DatasetConfig {
        counts: SplitCounts {
            train: a.train,
            val: a.val,
            test: a.test,
        },
        snr_range_db: (a.snr_lo, a.snr_hi),
        seed: cli.seed,
        ..Default::default()
    };
    let manifest = dataset::build_dataset(&speech, &irs, &noise, &config, &cli.output_dir)?;
    eprintln!(
        "wrote {} examples to {} (normalization mean {:.3}, std {:.3})",
        manifest.examples.len(),
        cli.output_dir.display(),
        manifest.normalization.mean,
        manifest.normalization.std
    );
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<bool> {
    let options = AcceptanceOptions {
        filter: a.filter.clone(),
        extended_sweep: a.extended,
    };
    let report = acceptance::run(&options, |r| eprintln!("{}", r.line()));
    if report.results.is_empty() {
        bail!("no criterion matches the filter");
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.passed)
}

fn predictions_apply(cli: &Cli, a: &PredictionsArgs) -> Result<()> {
    let scene = load_scene(&a.room)?;
    let records = parse_predictions(&read_text(&a.predictions)?)
        .with_context(|| format!("bad predictions file {}", a.predictions.display()))?;
    let reference = targets_from_predictions(&records, a.example_id.as_deref())?;
    let out = run_match(&scene, &reference, &a.trace.simulation(cli.seed))?;
    finish_match(cli, &out, a.dry.as_deref(), a.wet_gain, "predicted_")
}

fn setup_threads(requested: Option<usize>) -> Result<Option<usize>> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().with_context(|| format!("{THREADS_ENV}={v} is not a count"))?),
        Err(_) => None,
    };
    let n = match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c)),
        (r, c) => r.or(c),
    }
    .map(|n| n.max(1));
    #[cfg(feature = "parallel")]
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(n)
}

fn run(cli: &Cli) -> Result<bool> {
    let threads = setup_threads(cli.threads)?;
    let mut resolved = serde_json::to_value(cli)?;
    resolved["threads"] = serde_json::json!(threads);
    resolved["parallel_build"] = serde_json::json!(roomrelight::par::is_parallel());
    info!("config {}", serde_json::to_string(&resolved)?);
    fs::create_dir_all(&cli.output_dir).with_context(|| format!("cannot create {}", cli.output_dir.display()))?;
    match &cli.command {
        Command::AnalyzeIr(a) => analyze(a)?,
        Command::Augment(a) => augment(cli, a)?,
        Command::SimulateIr(a) => simulate(cli, a)?,
        Command::Optimize(a) => optimize(cli, a)?,
        Command::Sweep(a) => sweep(cli, a)?,
        Command::Match(a) => do_match(cli, a)?,
        Command::Render(a) => do_render(cli, a)?,
        Command::Dataset(a) => do_dataset(cli, a)?,
        Command::Bench(a) => return bench(a),
        Command::PredictionsApply(a) => predictions_apply(cli, a)?,
    }
    Ok(true)
}

// Library errors already embed their source text, so skip causes that repeat it.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
