//! Data-parallel workloads on the default rayon pool against a one-thread
//! pool. Build with `--no-default-features` to time the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use roomrelight::augment::{build_augmented_corpus, fit_eq_distribution, AugmentationSpec};
use roomrelight::bands::{BandProfile, BandSet};
use roomrelight::geo::{trace_stochastic, AirModel, MaterialCoeffs, RoomModel, TraceConfig};
use roomrelight::matopt::{optimize_all_bands, FitOptions};
use roomrelight::synth::synthesize_ir;
use roomrelight::synthetic::synthetic_corpus;

const FS: u32 = 16_000;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let mode = if roomrelight::par::is_parallel() { "parallel" } else { "sequential-build" };
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out = vec![(format!("{mode}/1-thread"), ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if n > 1 {
        out.push((format!("{mode}/{n}-threads"), ThreadPoolBuilder::new().num_threads(n).build().unwrap()));
    }
    out
}

fn room() -> RoomModel {
    RoomModel::uniform_shoebox([5.0, 7.0, 3.0], MaterialCoeffs::uniform("wall", 0.8).unwrap()).unwrap()
}

fn trace_config() -> TraceConfig {
    TraceConfig {
        n_rays: 5000,
        max_time: 1.0,
        ..Default::default()
    }
}

fn benches(c: &mut Criterion) {
    let room = room();
    let (src, lst) = ([1.2, 1.5, 1.4], [3.6, 5.1, 1.7]);
    let paths = trace_stochastic(&room, src, lst, &trace_config()).unwrap();
    let targets = BandProfile::uniform(BandSet::T60, 0.6);
    let air = AirModel::default();
    let fit = optimize_all_bands(&paths, 1, &targets, &air, &FitOptions::default()).unwrap();
    let mats = fit.apply(&room.materials).unwrap();
    let sources = synthetic_corpus(6, (0.3, 0.9), 2.0, FS, 1).unwrap();
    let spec = AugmentationSpec {
        target_t60_range: (0.2, 1.2),
        t60_grid: 5,
        drr_range: (0.0, 10.0),
        eq_model: fit_eq_distribution(&sources).unwrap(),
        eq_std_inflation: 1.25,
        seed: 3,
        count: 20,
    };

    for (label, pool) in pools() {
        let mut g = c.benchmark_group("workloads");
        g.sample_size(10);
        g.bench_function(BenchmarkId::new("trace_stochastic", &label), |b| {
            b.iter(|| pool.install(|| trace_stochastic(&room, src, lst, &trace_config()).unwrap()))
        });
        g.bench_function(BenchmarkId::new("optimize_all_bands", &label), |b| {
            b.iter(|| pool.install(|| optimize_all_bands(&paths, 1, &targets, &air, &FitOptions::default()).unwrap()))
        });
        g.bench_function(BenchmarkId::new("synthesize_ir", &label), |b| {
            b.iter(|| pool.install(|| synthesize_ir(&paths, &mats, &air, FS, 0).unwrap()))
        });
        g.bench_function(BenchmarkId::new("augmented_corpus", &label), |b| {
            b.iter(|| pool.install(|| build_augmented_corpus(&sources, &spec).unwrap()))
        });
        g.finish();
    }
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
