//! Inverse material fitting: choose per-band reflectivities so the
//! best-fit decay slope of the path energies hits a target T60.

use serde::{Deserialize, Serialize};

use crate::bands::{BandProfile, BandSet, RENDER_CENTERS};
use crate::error::{Error, Result};
use crate::geo::{path_energy, AirModel, MaterialCoeffs, PathRecord, N_BANDS};
use crate::par;

const DB_PER_NEPER: f64 = 10.0 / std::f64::consts::LN_10;
/// Paths earlier than this after the direct arrival are excluded from fits.
pub const FIT_START_S: f64 = 0.005;
/// Paths later than this many target T60s after the direct arrival are excluded.
pub const FIT_SPAN_T60: f64 = 1.5;
pub const DEFAULT_BOUNDS: (f64, f64) = (0.02, 0.999);
pub const DEFAULT_INIT: f64 = 0.9;

/// Least-squares slope of `y` against `t`.
pub fn slope_from_points(t: &[f64], y: &[f64]) -> Result<f64> {
    let n = t.len() as f64;
    if t.len() != y.len() || t.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let (st, sy, stt, sty) = t.iter().zip(y).fold((0.0, 0.0, 0.0, 0.0), |(a, b, c, d), (&t, &y)| {
        (a + t, b + y, c + t * t, d + t * y)
    });
    let den = n * stt - st * st;
    if !(den.abs() > 1e-12 * n * stt.max(1e-300)) {
        return Err(Error::DegenerateFit("all arrival times are equal".into()));
    }
    Ok((n * sty - st * sy) / den)
}

/// Best-fit slope (dB/s) of the path energies in dB against arrival time.
pub fn slope_of_fit(paths: &[PathRecord], materials: &[MaterialCoeffs], air: &AirModel, band: usize) -> Result<f64> {
    let t: Vec<f64> = paths.iter().map(|p| p.arrival_time).collect();
    let y: Vec<f64> = paths
        .iter()
        .map(|p| DB_PER_NEPER * path_energy(p, materials, air, band).ln())
        .collect();
    slope_from_points(&t, &y)
}

/// Keeps the records inside the fit window for `target_t60`.
pub fn fit_window(paths: &[PathRecord], target_t60: f64) -> Vec<PathRecord> {
    let Some(t0) = paths.iter().map(|p| p.arrival_time).reduce(f64::min) else {
        return Vec::new();
    };
    let (a, b) = (t0 + FIT_START_S, t0 + FIT_SPAN_T60 * target_t60);
    paths
        .iter()
        .filter(|p| p.arrival_time >= a && p.arrival_time <= b)
        .cloned()
        .collect()
}

/// Single-band fitting problem.
///
/// The slope is linear in the path dB values, and each path's dB value is
/// linear in `ln ρ`, so the problem reduces to
/// `m(ρ) = m0 + (10/ln10)·Σ_j N_j ln ρ_j` with `N_j = Σ_i c_i n_ij` and
/// `c_i` the regression weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub band: usize,
    pub target_t60: f64,
    pub bounds: Vec<(f64, f64)>,
    pub init: Vec<f64>,
    pub n_paths: usize,
    m0: f64,
    weights: Vec<f64>,
}

impl OptimizationProblem {
    /// Builds the problem from paths already restricted to the fit window.
    pub fn new(
        paths: &[PathRecord],
        n_materials: usize,
        band: usize,
        target_t60: f64,
        air: &AirModel,
        bounds: (f64, f64),
        init: f64,
    ) -> Result<Self> {
        if !(target_t60 > 0.0 && target_t60.is_finite()) {
            return Err(Error::InvalidInput(format!("target T60 must be positive, got {target_t60}")));
        }
        if !(0.0 < bounds.0 && bounds.0 < bounds.1 && bounds.1 <= 1.0) {
            return Err(Error::InvalidInput(format!("bounds {bounds:?} must satisfy 0 < lo < hi <= 1")));
        }
        if band >= N_BANDS {
            return Err(Error::InvalidInput(format!("band index {band} out of range")));
        }
        if paths.iter().any(|p| p.bounce_counts.len() != n_materials) {
            return Err(Error::InvalidInput("path bounce counts do not match the material count".into()));
        }
        let n = paths.len() as f64;
        if paths.len() < 2 {
            return Err(Error::DegenerateFit(format!("{} paths in the fit window", paths.len())));
        }
        let chunk = 4096;
        let st = par::chunked_sum(paths.len(), chunk, |i| paths[i].arrival_time);
        let stt = par::chunked_sum(paths.len(), chunk, |i| paths[i].arrival_time.powi(2));
        let den = n * stt - st * st;
        if !(den > 1e-12 * n * stt) {
            return Err(Error::DegenerateFit("all arrival times are equal".into()));
        }
        let c = |i: usize| (n * paths[i].arrival_time - st) / den;
        let m0 = par::chunked_sum(paths.len(), chunk, |i| {
            let p = &paths[i];
            let base = p.weight * (-air.gamma[band] * p.distance).exp()
                / (4.0 * std::f64::consts::PI * p.distance * p.distance);
            c(i) * DB_PER_NEPER * base.ln()
        });
        let weights = (0..n_materials)
            .map(|j| par::chunked_sum(paths.len(), chunk, |i| c(i) * paths[i].bounce_counts[j] as f64))
            .collect();
        let init = vec![init.clamp(bounds.0, bounds.1); n_materials];
        Ok(Self {
            band,
            target_t60,
            bounds: vec![bounds; n_materials],
            init,
            n_paths: paths.len(),
            m0,
            weights,
        })
    }

    pub fn n_materials(&self) -> usize {
        self.weights.len()
    }

    pub fn target_slope(&self) -> f64 {
        -60.0 / self.target_t60
    }

    fn check(&self, rho: &[f64]) -> Result<()> {
        if rho.len() != self.weights.len() {
            return Err(Error::InvalidInput("reflectivity vector has the wrong length".into()));
        }
        if let Some(r) = rho.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidInput(format!("reflectivity {r} must be positive")));
        }
        Ok(())
    }

    pub fn slope(&self, rho: &[f64]) -> Result<f64> {
        self.check(rho)?;
        Ok(self.m0
            + DB_PER_NEPER * self.weights.iter().zip(rho).map(|(w, r)| w * r.ln()).sum::<f64>())
    }

    pub fn objective(&self, rho: &[f64]) -> Result<f64> {
        Ok((self.slope(rho)? - self.target_slope()).powi(2))
    }

    pub fn gradient(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let r = 2.0 * (self.slope(rho)? - self.target_slope());
        Ok(self.weights.iter().zip(rho).map(|(w, p)| r * DB_PER_NEPER * w / p).collect())
    }

    fn eval(&self, rho: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f = self.objective(rho)?;
        let g = self.gradient(rho)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective or gradient".into()));
        }
        Ok((f, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub rho: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (J, max |projected gradient|) at the start and after each accepted step.
    pub trace: Vec<(f64, f64)>,
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&x, &g), &(lo, hi))| if (x <= lo && g > 0.0) || (x >= hi && g < 0.0) { 0.0 } else { g })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected limited-memory BFGS with an active set and Armijo
/// backtracking along the projection arc.
pub fn optimize(problem: &OptimizationProblem, settings: &OptimizerSettings) -> Result<OptimizationResult> {
    let bounds = &problem.bounds;
    let project = |x: &mut [f64]| {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut x = problem.init.clone();
    project(&mut x);
    let (mut f, mut g) = problem.eval(&x)?;
    let mut trace = vec![(f, inf_norm(&projected_gradient(&x, &g, bounds)))];
    let mut mem: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let tol = settings.tol;

    while iterations < settings.max_iter {
        if f < tol * tol || inf_norm(&g) < tol {
            converged = true;
            break;
        }
        let pg = projected_gradient(&x, &g, bounds);
        if inf_norm(&pg) < tol {
            // stationary on the boundary without reaching the target
            break;
        }
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, g)| *p != 0.0 || *g == 0.0).collect();
        let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };

        // two-loop recursion on the free variables
        let mut q = masked(&g);
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y) in mem.iter().rev() {
            let (s, y) = (masked(s), masked(y));
            let sy = vdot(&s, &y);
            if sy <= 0.0 {
                alphas.push(0.0);
                continue;
            }
            let a = vdot(&s, &q) / sy;
            q.iter_mut().zip(&y).for_each(|(q, y)| *q -= a * y);
            alphas.push(a);
        }
        if let Some((s, y)) = mem.last() {
            let (s, y) = (masked(s), masked(y));
            let (sy, yy) = (vdot(&s, &y), vdot(&y, &y));
            if sy > 0.0 && yy > 0.0 {
                q.iter_mut().for_each(|v| *v *= sy / yy);
            }
        }
        for ((s, y), a) in mem.iter().zip(alphas.iter().rev()) {
            let (s, y) = (masked(s), masked(y));
            let sy = vdot(&s, &y);
            if sy <= 0.0 {
                continue;
            }
            let b = vdot(&y, &q) / sy;
            q.iter_mut().zip(&s).for_each(|(q, s)| *q += (a - b) * s);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        if vdot(&d, &pg) >= 0.0 {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut step = if mem.is_empty() { (0.1 / inf_norm(&d)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + step * d).collect();
            project(&mut xn);
            let dx: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = vdot(&g, &dx);
            if decrease < 0.0 {
                let (fnew, gnew) = problem.eval(&xn)?;
                if fnew <= f + 1e-4 * decrease {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        if vdot(&s, &y) > 1e-16 * vdot(&y, &y).sqrt() * vdot(&s, &s).sqrt() {
            mem.push((s, y));
            if mem.len() > settings.memory {
                mem.remove(0);
            }
        }
        x = xn;
        f = fnew;
        g = gnew;
        iterations += 1;
        trace.push((f, inf_norm(&projected_gradient(&x, &g, bounds))));
    }
    if !converged && (f < tol * tol || inf_norm(&g) < tol) {
        converged = true;
    }
    Ok(OptimizationResult {
        rho: x,
        objective: f,
        iterations,
        converged,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandOutcome {
    pub center: f64,
    pub target_t60: f64,
    pub target_was_valid: bool,
    /// Target handed to the slope objective after envelope calibration.
    pub slope_target_t60: f64,
    pub result: Option<OptimizationResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialFit {
    /// `rho[material][band]` over the T60 bands.
    pub rho: Vec<[f64; N_BANDS]>,
    pub bands: Vec<BandOutcome>,
}

impl MaterialFit {
    pub fn all_ok(&self) -> bool {
        self.bands.iter().all(|b| b.result.is_some())
    }

    /// Reflectivities over the render bands; 62.5 Hz copies 125 Hz.
    pub fn render_rho(&self) -> Vec<[f64; RENDER_CENTERS.len()]> {
        self.rho
            .iter()
            .map(|r| std::array::from_fn(|b| r[b.saturating_sub(1)]))
            .collect()
    }

    pub fn apply(&self, materials: &[MaterialCoeffs]) -> Result<Vec<MaterialCoeffs>> {
        materials
            .iter()
            .zip(&self.rho)
            .map(|(m, r)| MaterialCoeffs::new(m.name.clone(), *r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub bounds: (f64, f64),
    pub init: f64,
    pub settings: OptimizerSettings,
    /// Re-fits that rescale the slope target until the Schroeder T60 of
    /// the traced energies matches the requested T60. 0 disables.
    pub envelope_passes: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: DEFAULT_BOUNDS,
            init: DEFAULT_INIT,
            settings: OptimizerSettings::default(),
            envelope_passes: DEFAULT_ENVELOPE_PASSES,
        }
    }
}

pub const DEFAULT_ENVELOPE_PASSES: usize = 4;
/// Relative envelope T60 error below which calibration stops.
const ENVELOPE_TOL: f64 = 0.005;
const ENVELOPE_RATE: u32 = 16_000;

/// Schroeder T60 of the traced energy histogram in `band` with every
/// material set to `rho`.
fn envelope_t60(paths: &[PathRecord], rho: &[f64], air: &AirModel, band: usize) -> Result<f64> {
    let mats = rho
        .iter()
        .enumerate()
        .map(|(j, &r)| MaterialCoeffs::new(format!("m{j}"), [r; N_BANDS]))
        .collect::<Result<Vec<_>>>()?;
    crate::geo::traced_t60(paths, &mats, air, band, ENVELOPE_RATE)
}

/// Fits one band. The slope of per-path dB values decays faster than the
/// energy envelope (the log of a mean exceeds the mean of logs), so the
/// slope target is rescaled until the envelope T60 hits `target`.
fn fit_band(
    paths: &[PathRecord],
    n_materials: usize,
    band: usize,
    target: f64,
    air: &AirModel,
    options: &FitOptions,
) -> Result<(OptimizationResult, f64)> {
    let window = fit_window(paths, target);
    let solve = |goal: f64| {
        let problem = OptimizationProblem::new(&window, n_materials, band, goal, air, options.bounds, options.init)?;
        optimize(&problem, &options.settings)
    };
    let mut goal = target;
    let mut result = solve(goal)?;
    for _ in 0..options.envelope_passes {
        let measured = match envelope_t60(paths, &result.rho, air, band) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("band {band}: envelope calibration skipped: {e}");
                break;
            }
        };
        if (measured / target - 1.0).abs() < ENVELOPE_TOL {
            break;
        }
        goal *= target / measured;
        result = solve(goal)?;
    }
    Ok((result, goal))
}

/// One independent fit per T60 band over a shared path set. Invalid
/// targets inherit their nearest valid neighbour; failed bands keep the
/// initial reflectivity and report the error.
pub fn optimize_all_bands(
    paths: &[PathRecord],
    n_materials: usize,
    targets: &BandProfile,
    air: &AirModel,
    options: &FitOptions,
) -> Result<MaterialFit> {
    if targets.bands != BandSet::T60 {
        return Err(Error::InvalidInput("material fitting needs T60-band targets".into()));
    }
    let filled = targets.filled()?;
    let bands: Vec<BandOutcome> = par::map_range(N_BANDS, |b| {
        let (result, goal, error) = match fit_band(paths, n_materials, b, filled[b], air, options) {
            Ok((r, goal)) => (Some(r), goal, None),
            Err(e) => (None, filled[b], Some(e.to_string())),
        };
        BandOutcome {
            center: BandSet::T60.centers()[b],
            target_t60: filled[b],
            target_was_valid: targets.valid[b],
            slope_target_t60: goal,
            result,
            error,
        }
    });
    let init = options.init.clamp(options.bounds.0, options.bounds.1);
    let rho = (0..n_materials)
        .map(|m| std::array::from_fn(|b| bands[b].result.as_ref().map_or(init, |r| r.rho[m])))
        .collect();
    Ok(MaterialFit { rho, bands })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{trace_stochastic, MaterialCoeffs, RoomModel, TraceConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn shoebox_paths(seed: u64, dims: [f64; 3]) -> (RoomModel, Vec<PathRecord>) {
        let mats: Vec<_> = (0..6).map(|i| MaterialCoeffs::uniform(format!("m{i}"), 0.8).unwrap()).collect();
        let room = RoomModel::shoebox(dims, [0, 1, 2, 3, 4, 5], mats).unwrap();
        let cfg = TraceConfig {
            n_rays: 3000,
            max_time: 1.2,
            seed,
            ..Default::default()
        };
        let src = [dims[0] * 0.3, dims[1] * 0.25, dims[2] * 0.4];
        let lst = [dims[0] * 0.7, dims[1] * 0.75, dims[2] * 0.5];
        let paths = trace_stochastic(&room, src, lst, &cfg).unwrap();
        (room, paths)
    }

    #[test]
    fn exact_line_slope() {
        let t: Vec<f64> = (0..50).map(|i| 0.01 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 - 120.0 * t).collect();
        assert!((slope_from_points(&t, &y).unwrap() + 120.0).abs() < 1e-9);
        assert!(slope_from_points(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn slope_matches_normal_equations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let t: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 50.0).collect();
        // solve [[n, Σt], [Σt, Σt²]] [b, m] = [Σy, Σty] by Cramer's rule
        let n = t.len() as f64;
        let (a11, a12, a22) = (n, t.iter().sum::<f64>(), t.iter().map(|v| v * v).sum::<f64>());
        let (r1, r2) = (y.iter().sum::<f64>(), t.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>());
        let m = (a11 * r2 - a12 * r1) / (a11 * a22 - a12 * a12);
        assert!((slope_from_points(&t, &y).unwrap() - m).abs() < 1e-9 * m.abs().max(1.0));
    }

    #[test]
    fn problem_slope_equals_direct_slope() {
        let (room, paths) = shoebox_paths(1, [4.0, 6.0, 3.0]);
        let air = AirModel::default();
        let window = fit_window(&paths, 0.6);
        let p = OptimizationProblem::new(&window, 6, 2, 0.6, &air, DEFAULT_BOUNDS, 0.9).unwrap();
        let rho = [0.7, 0.8, 0.9, 0.6, 0.5, 0.95];
        let mats = room.with_reflectivity(&rho.map(|r| [r; 7])).unwrap().materials;
        let direct = slope_of_fit(&window, &mats, &air, 2).unwrap();
        assert!((p.slope(&rho).unwrap() - direct).abs() < 1e-8 * direct.abs());
    }

    #[test]
    fn target_slope_for_half_second() {
        let (_, paths) = shoebox_paths(1, [4.0, 6.0, 3.0]);
        let p = OptimizationProblem::new(&fit_window(&paths, 0.5), 6, 0, 0.5, &AirModel::default(), DEFAULT_BOUNDS, 0.9).unwrap();
        assert_eq!(p.target_slope(), -120.0);
    }

    #[test]
    fn unhit_material_has_zero_gradient() {
        let (_, mut paths) = shoebox_paths(2, [4.0, 6.0, 3.0]);
        for p in &mut paths {
            p.bounce_counts.push(0);
        }
        let p = OptimizationProblem::new(&fit_window(&paths, 0.6), 7, 3, 0.6, &AirModel::default(), DEFAULT_BOUNDS, 0.9).unwrap();
        assert_eq!(p.gradient(&[0.8; 7]).unwrap()[6], 0.0);
    }

    #[test]
    fn zero_reflectivity_is_rejected() {
        let (_, paths) = shoebox_paths(2, [4.0, 6.0, 3.0]);
        let p = OptimizationProblem::new(&fit_window(&paths, 0.6), 6, 3, 0.6, &AirModel::default(), DEFAULT_BOUNDS, 0.9).unwrap();
        assert!(p.gradient(&[0.8, 0.8, 0.0, 0.8, 0.8, 0.8]).is_err());
    }

    #[test]
    fn converges_on_shoebox() {
        let (_, paths) = shoebox_paths(3, [4.0, 6.0, 3.0]);
        let p = OptimizationProblem::new(&fit_window(&paths, 0.6), 6, 3, 0.6, &AirModel::default(), DEFAULT_BOUNDS, 0.9).unwrap();
        let r = optimize(&p, &OptimizerSettings::default()).unwrap();
        assert!(r.converged && r.objective < 1e-4 && r.iterations <= 200, "{r:?}");
        assert!(r.trace.windows(2).all(|w| w[1].0 <= w[0].0));
        let again = optimize(&p, &OptimizerSettings::default()).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
        // at the optimum the gradient vanishes
        assert!(p.gradient(&r.rho).unwrap().iter().all(|g| g.abs() < 1e-3));

        let mut warm = p.clone();
        warm.init = r.rho.clone();
        let w = optimize(&warm, &OptimizerSettings::default()).unwrap();
        assert!(w.iterations <= 1 && w.rho == r.rho);
    }

    #[test]
    fn unreachable_target_pins_upper_bound() {
        let (_, paths) = shoebox_paths(4, [2.0, 2.5, 2.0]);
        let p = OptimizationProblem::new(&fit_window(&paths, 10.0), 6, 3, 10.0, &AirModel::default(), (0.02, 0.95), 0.9).unwrap();
        let r = optimize(&p, &OptimizerSettings::default()).unwrap();
        assert!(!r.converged);
        assert!(r.rho.iter().all(|&v| v == 0.95), "{:?}", r.rho);
        assert!(r.objective <= r.trace[0].0);
    }

    #[test]
    fn uniform_targets_give_identical_bands() {
        let (_, paths) = shoebox_paths(5, [4.0, 6.0, 3.0]);
        let fit = optimize_all_bands(&paths, 6, &BandProfile::uniform(BandSet::T60, 0.5), &AirModel::none(), &FitOptions::default()).unwrap();
        assert!(fit.all_ok());
        for row in &fit.rho {
            assert!(row.iter().all(|r| (r - row[0]).abs() < 1e-6));
        }
        let render = fit.render_rho();
        assert_eq!(render[0][0], fit.rho[0][0]);
        assert_eq!(render[0][7], fit.rho[0][6]);
    }

    #[test]
    fn envelope_calibration_hits_schroeder_t60() {
        let (_, paths) = shoebox_paths(6, [4.0, 6.0, 3.0]);
        let targets = BandProfile::uniform(BandSet::T60, 0.3);
        let fit = optimize_all_bands(&paths, 6, &targets, &AirModel::default(), &FitOptions::default()).unwrap();
        let t = envelope_t60(&paths, &fit.bands[3].result.as_ref().unwrap().rho, &AirModel::default(), 3).unwrap();
        assert!((t / 0.3 - 1.0).abs() < 0.02, "{t}");
        assert!(fit.bands[3].slope_target_t60 < 0.3);
        let plain = FitOptions {
            envelope_passes: 0,
            ..Default::default()
        };
        let fit = optimize_all_bands(&paths, 6, &targets, &AirModel::default(), &plain).unwrap();
        assert_eq!(fit.bands[3].slope_target_t60, 0.3);
    }

    #[test]
    fn invalid_band_inherits_neighbour_target() {
        let (_, paths) = shoebox_paths(5, [4.0, 6.0, 3.0]);
        let targets = BandProfile::new(BandSet::T60, vec![9.0, 0.7, 0.6, 0.6, 0.5, 0.5, 0.4])
            .unwrap()
            .with_mask(vec![false, true, true, true, true, true, true])
            .unwrap();
        let fit = optimize_all_bands(&paths, 6, &targets, &AirModel::default(), &FitOptions::default()).unwrap();
        assert_eq!(fit.bands[0].target_t60, 0.7);
        assert!(!fit.bands[0].target_was_valid);
    }

    fn fd_check(p: &OptimizationProblem, rho: &[f64]) -> f64 {
        let g = p.gradient(rho).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..rho.len() {
            let (mut a, mut b) = (rho.to_vec(), rho.to_vec());
            a[j] += h;
            b[j] -= h;
            let fd = (p.objective(&a).unwrap() - p.objective(&b).unwrap()) / (2.0 * h);
            worst = worst.max((g[j] - fd).abs() / (1.0 + g[j].abs()));
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn gradient_matches_finite_differences(
            seed in 0u64..1000,
            rho in proptest::collection::vec(0.1f64..0.98, 6),
            target in 0.2f64..2.0,
            band in 0usize..7,
        ) {
            let (_, paths) = shoebox_paths(seed, [3.0 + (seed % 5) as f64, 4.0, 2.5]);
            let p = OptimizationProblem::new(&fit_window(&paths, target), 6, band, target, &AirModel::default(), DEFAULT_BOUNDS, 0.9).unwrap();
            prop_assert!(fd_check(&p, &rho) < 1e-5);
            prop_assert!(p.objective(&rho).unwrap() >= 0.0);
        }

        #[test]
        fn slope_ignores_constant_energy_scale(
            seed in 0u64..1000,
            log_c in -30f64..30.0,
        ) {
            let (room, paths) = shoebox_paths(seed, [4.0, 5.0, 3.0]);
            let air = AirModel::default();
            let base = slope_of_fit(&paths, &room.materials, &air, 3).unwrap();
            let scaled: Vec<PathRecord> = paths
                .iter()
                .map(|p| PathRecord { weight: p.weight * 10f64.powf(log_c), ..p.clone() })
                .collect();
            let moved = slope_of_fit(&scaled, &room.materials, &air, 3).unwrap();
            prop_assert!((base - moved).abs() < 1e-9 * base.abs().max(1.0));
        }
    }
}
