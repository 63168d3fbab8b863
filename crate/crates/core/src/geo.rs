//! Geometric sound propagation: room models, image-source and stochastic
//! ray tracing, and per-path energies.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::schroeder_fit;
use crate::bands::T60_CENTERS;
use crate::error::{Error, Result};
use crate::par;

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const N_BANDS: usize = T60_CENTERS.len();
pub const DEFAULT_AIR_GAMMA: [f64; N_BANDS] = [0.0002, 0.0003, 0.0005, 0.001, 0.002, 0.006, 0.02];
pub const MAX_IMAGE_ORDER: usize = 60;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialCoeffs {
    pub name: String,
    /// Per-bounce energy retention per T60 band; absorption is `1 - ρ`.
    pub reflectivity: [f64; N_BANDS],
}

impl MaterialCoeffs {
    pub fn new(name: impl Into<String>, reflectivity: [f64; N_BANDS]) -> Result<Self> {
        let name = name.into();
        if let Some(r) = reflectivity.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::InvalidInput(format!("material {name}: reflectivity {r} outside (0, 1]")));
        }
        Ok(Self { name, reflectivity })
    }

    pub fn uniform(name: impl Into<String>, reflectivity: f64) -> Result<Self> {
        Self::new(name, [reflectivity; N_BANDS])
    }

    pub fn absorption(&self) -> [f64; N_BANDS] {
        self.reflectivity.map(|r| 1.0 - r)
    }
}

/// Energy attenuation of air, nepers per meter per T60 band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirModel {
    pub gamma: [f64; N_BANDS],
}

impl Default for AirModel {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_AIR_GAMMA,
        }
    }
}

impl AirModel {
    pub fn new(gamma: [f64; N_BANDS]) -> Result<Self> {
        if gamma.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidInput("air attenuation must be finite and >= 0".into()));
        }
        if gamma.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("air attenuation must not decrease with frequency".into()));
        }
        Ok(Self { gamma })
    }

    pub fn none() -> Self {
        Self { gamma: [0.0; N_BANDS] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub vertices: Vec<Vec3>,
    pub material: usize,
    /// Unit normal from the vertex winding (right-hand rule).
    pub normal: Vec3,
    pub area: f64,
    offset: f64,
}

impl Plane {
    pub fn new(vertices: Vec<Vec3>, material: usize) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry("a plane needs at least 3 vertices".into()));
        }
        // Newell's method
        let mut n = [0.0; 3];
        for i in 0..vertices.len() {
            let a = vertices[i];
            let b = vertices[(i + 1) % vertices.len()];
            n[0] += (a[1] - b[1]) * (a[2] + b[2]);
            n[1] += (a[2] - b[2]) * (a[0] + b[0]);
            n[2] += (a[0] - b[0]) * (a[1] + b[1]);
        }
        let len = norm(n);
        if !(len > 1e-12) {
            return Err(Error::Geometry("degenerate plane polygon".into()));
        }
        let normal = scale(n, 1.0 / len);
        let offset = dot(normal, vertices[0]);
        if vertices.iter().any(|v| (dot(normal, *v) - offset).abs() > 1e-6 * (1.0 + offset.abs())) {
            return Err(Error::Geometry("plane vertices are not coplanar".into()));
        }
        Ok(Self {
            vertices,
            material,
            normal,
            area: 0.5 * len,
            offset,
        })
    }

    pub fn centroid(&self) -> Vec3 {
        let s = self.vertices.iter().fold([0.0; 3], |acc, v| add(acc, *v));
        scale(s, 1.0 / self.vertices.len() as f64)
    }

    /// Ray parameter of the hit with this polygon, if any.
    fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let denom = dot(self.normal, dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = (self.offset - dot(self.normal, origin)) / denom;
        if s <= 1e-9 {
            return None;
        }
        let p = add(origin, scale(dir, s));
        let n = self.vertices.len();
        // convex polygon: p must lie on the same side of every edge
        let tol = 1e-9;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if dot(cross(sub(b, a), sub(p, a)), self.normal) < -tol {
                return None;
            }
        }
        Some(s)
    }
}

/// Wall planes of an axis-aligned box, in the order x=0, x=Lx, y=0, y=Ly,
/// z=0, z=Lz. Windings give inward normals.
pub fn shoebox_planes(dims: Vec3, materials: [usize; 6]) -> Result<Vec<Plane>> {
    let [x, y, z] = dims;
    if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Geometry(format!("shoebox dimensions must be positive, got {dims:?}")));
    }
    let quads = [
        vec![[0.0, 0.0, 0.0], [0.0, y, 0.0], [0.0, y, z], [0.0, 0.0, z]],
        vec![[x, 0.0, 0.0], [x, 0.0, z], [x, y, z], [x, y, 0.0]],
        vec![[0.0, 0.0, 0.0], [0.0, 0.0, z], [x, 0.0, z], [x, 0.0, 0.0]],
        vec![[0.0, y, 0.0], [x, y, 0.0], [x, y, z], [0.0, y, z]],
        vec![[0.0, 0.0, 0.0], [x, 0.0, 0.0], [x, y, 0.0], [0.0, y, 0.0]],
        vec![[0.0, 0.0, z], [0.0, y, z], [x, y, z], [x, 0.0, z]],
    ];
    quads.into_iter().zip(materials).map(|(q, m)| Plane::new(q, m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomModel {
    pub planes: Vec<Plane>,
    pub materials: Vec<MaterialCoeffs>,
    /// Box dimensions when the planes are exactly [`shoebox_planes`].
    pub shoebox: Option<Vec3>,
    pub volume_m3: f64,
    pub surface_area_m2: f64,
}

impl RoomModel {
    pub fn new(planes: Vec<Plane>, materials: Vec<MaterialCoeffs>) -> Result<Self> {
        Self::build(planes, materials, None)
    }

    pub fn shoebox(dims: Vec3, wall_materials: [usize; 6], materials: Vec<MaterialCoeffs>) -> Result<Self> {
        Self::build(shoebox_planes(dims, wall_materials)?, materials, Some(dims))
    }

    /// Shoebox with one material on every wall.
    pub fn uniform_shoebox(dims: Vec3, material: MaterialCoeffs) -> Result<Self> {
        Self::shoebox(dims, [0; 6], vec![material])
    }

    fn build(planes: Vec<Plane>, materials: Vec<MaterialCoeffs>, shoebox: Option<Vec3>) -> Result<Self> {
        if planes.len() < 4 {
            return Err(Error::Geometry("a closed room needs at least 4 planes".into()));
        }
        if let Some(p) = planes.iter().find(|p| p.material >= materials.len()) {
            return Err(Error::Geometry(format!("plane references missing material {}", p.material)));
        }
        let surface_area_m2 = planes.iter().map(|p| p.area).sum();
        // divergence theorem; the sign depends on the winding convention
        let volume_m3 = planes
            .iter()
            .map(|p| p.area * dot(p.normal, p.centroid()))
            .sum::<f64>()
            .abs()
            / 3.0;
        if !(volume_m3 > 0.0) {
            return Err(Error::Geometry("room encloses no volume".into()));
        }
        Ok(Self {
            planes,
            materials,
            shoebox,
            volume_m3,
            surface_area_m2,
        })
    }

    pub fn n_materials(&self) -> usize {
        self.materials.len()
    }

    /// Copy with the reflectivities replaced; `rho[m][b]`.
    pub fn with_reflectivity(&self, rho: &[[f64; N_BANDS]]) -> Result<Self> {
        if rho.len() != self.materials.len() {
            return Err(Error::InvalidInput("one reflectivity row per material required".into()));
        }
        let materials = self
            .materials
            .iter()
            .zip(rho)
            .map(|(m, r)| MaterialCoeffs::new(m.name.clone(), *r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            materials,
            ..self.clone()
        })
    }

    /// Inside test by ray parity (three skewed directions, majority vote).
    pub fn contains(&self, p: Vec3) -> bool {
        if let Some(d) = self.shoebox {
            return (0..3).all(|a| p[a] > 0.0 && p[a] < d[a]);
        }
        let dirs = [[0.5773, 0.5774, 0.5775], [-0.6123, 0.3532, 0.7072], [0.2673, -0.8018, 0.5345]];
        let inside = dirs
            .iter()
            .filter(|&&d| self.planes.iter().filter(|pl| pl.intersect(p, d).is_some()).count() % 2 == 1)
            .count();
        inside >= 2
    }

    /// Nearest wall hit along a ray: (distance, plane index).
    fn first_hit(&self, origin: Vec3, dir: Vec3) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.planes.iter().enumerate() {
            if let Some(s) = p.intersect(origin, dir) {
                if best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, i));
                }
            }
        }
        best
    }

    fn visible(&self, a: Vec3, b: Vec3) -> bool {
        let d = sub(b, a);
        let len = norm(d);
        match self.first_hit(a, scale(d, 1.0 / len)) {
            Some((s, _)) => s >= len - 1e-9,
            None => true,
        }
    }
}

/// One propagation path. Energies are evaluated per band by [`path_energy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub arrival_time: f64,
    pub distance: f64,
    /// Surface hits per material.
    pub bounce_counts: Vec<u32>,
    pub order: u32,
    /// Statistical weight (1 for deterministic paths).
    pub weight: f64,
}

impl PathRecord {
    fn new(distance: f64, bounce_counts: Vec<u32>, weight: f64) -> Self {
        let order = bounce_counts.iter().sum();
        Self {
            arrival_time: distance / SPEED_OF_SOUND,
            distance,
            bounce_counts,
            order,
            weight,
        }
    }
}

fn sort_records(records: &mut [PathRecord]) {
    records.sort_by(|a, b| {
        a.arrival_time
            .total_cmp(&b.arrival_time)
            .then(a.order.cmp(&b.order))
            .then(a.distance.total_cmp(&b.distance))
    });
}

fn check_inside(room: &RoomModel, p: Vec3, what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) || !room.contains(p) {
        return Err(Error::Geometry(format!("{what} {p:?} is outside the room")));
    }
    Ok(())
}

/// Exhaustive specular image sources of a shoebox room up to `max_order`.
pub fn trace_image_source(room: &RoomModel, src: Vec3, lst: Vec3, max_order: usize) -> Result<Vec<PathRecord>> {
    let dims = room
        .shoebox
        .ok_or_else(|| Error::Geometry("image-source tracing needs a shoebox room".into()))?;
    if max_order > MAX_IMAGE_ORDER {
        return Err(Error::InvalidInput(format!("max_order {max_order} exceeds {MAX_IMAGE_ORDER}")));
    }
    check_inside(room, src, "source")?;
    check_inside(room, lst, "listener")?;
    let wall_material: Vec<usize> = room.planes.iter().map(|p| p.material).collect();
    let n_mat = room.n_materials();
    let mo = max_order as i64;

    // per axis: (hits on wall 0, hits on wall L, displacement) for each image
    let axis_images = |a: usize| -> Vec<(u32, u32, f64)> {
        let mut v = Vec::new();
        for p in 0..2i64 {
            for n in -mo..=mo {
                let h0 = (n - p).unsigned_abs() as u32;
                let h1 = n.unsigned_abs() as u32;
                if (h0 + h1) as i64 <= mo {
                    let pos = (1 - 2 * p) as f64 * src[a] + 2.0 * n as f64 * dims[a] - lst[a];
                    v.push((h0, h1, pos));
                }
            }
        }
        v
    };
    let (ax, ay, az) = (axis_images(0), axis_images(1), axis_images(2));
    let rows: Vec<Vec<PathRecord>> = par::map_slice(&ax, |&(x0, x1, dx)| {
        let mut out = Vec::new();
        for &(y0, y1, dy) in &ay {
            let oxy = x0 + x1 + y0 + y1;
            if oxy as usize > max_order {
                continue;
            }
            for &(z0, z1, dz) in &az {
                if (oxy + z0 + z1) as usize > max_order {
                    continue;
                }
                let mut counts = vec![0u32; n_mat];
                for (wall, h) in [x0, x1, y0, y1, z0, z1].into_iter().enumerate() {
                    counts[wall_material[wall]] += h;
                }
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                out.push(PathRecord::new(d, counts, 1.0));
            }
        }
        out
    });
    let mut records: Vec<PathRecord> = rows.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub n_rays: usize,
    pub max_order: usize,
    /// Rays are followed until this propagation time (seconds).
    pub max_time: f64,
    pub detector_radius: f64,
    /// Probability that a reflection is diffuse (Lambertian) instead of specular.
    pub scattering: f64,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            n_rays: 20_000,
            max_order: 5_000,
            max_time: 2.0,
            detector_radius: 0.5,
            scattering: 0.3,
            seed: 0,
        }
    }
}

/// Fraction of rays allowed to leak out of the geometry.
pub const MAX_ESCAPE_FRACTION: f64 = 0.01;

fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = cross(n, a);
    let u = scale(u, 1.0 / norm(u));
    (u, cross(n, u))
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Monte Carlo ray tracing with a spherical receiver.
///
/// Each crossing of the receiver sphere becomes a record whose weight makes
/// [`path_energy`] an unbiased estimate of the energy arriving through the
/// sphere. The direct path is added analytically when unoccluded.
pub fn trace_stochastic(room: &RoomModel, src: Vec3, lst: Vec3, config: &TraceConfig) -> Result<Vec<PathRecord>> {
    check_inside(room, src, "source")?;
    check_inside(room, lst, "listener")?;
    if !(config.detector_radius > 0.0) || !(0.0..=1.0).contains(&config.scattering) || !(config.max_time > 0.0) {
        return Err(Error::InvalidInput("invalid trace configuration".into()));
    }
    let n_mat = room.n_materials();
    let r = config.detector_radius;
    let max_dist = config.max_time * SPEED_OF_SOUND;
    let density = 1.0 / (config.n_rays.max(1) as f64 * PI * r * r);

    let traced: Vec<(Vec<PathRecord>, bool)> = par::map_range(config.n_rays, |ray| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(ray as u64);
        let mut pos = src;
        let mut dir = random_unit(&mut rng);
        let mut travelled = 0.0;
        let mut counts = vec![0u32; n_mat];
        let mut order = 0usize;
        let mut out = Vec::new();
        loop {
            let Some((s, plane)) = room.first_hit(pos, dir) else {
                return (out, true);
            };
            if order > 0 {
                // receiver sphere entry on this segment
                let oc = sub(pos, lst);
                let b = dot(oc, dir);
                let disc = b * b - (dot(oc, oc) - r * r);
                if disc > 0.0 {
                    let s1 = -b - disc.sqrt();
                    if s1 > 1e-9 && s1 < s && travelled + s1 <= max_dist {
                        let d = travelled + s1;
                        out.push(PathRecord::new(d, counts.clone(), 4.0 * PI * d * d * density));
                    }
                }
            }
            travelled += s;
            order += 1;
            if travelled > max_dist || order > config.max_order {
                return (out, false);
            }
            let p = &room.planes[plane];
            counts[p.material] += 1;
            pos = add(pos, scale(dir, s));
            // inward normal faces against the incoming ray
            let n = if dot(p.normal, dir) > 0.0 { scale(p.normal, -1.0) } else { p.normal };
            dir = if rng.random::<f64>() < config.scattering {
                let (u, v) = orthonormal_basis(n);
                let a: f64 = rng.random();
                let phi = rng.random_range(0.0..2.0 * PI);
                let (ct, st) = (a.sqrt(), (1.0 - a).sqrt());
                add(add(scale(u, st * phi.cos()), scale(v, st * phi.sin())), scale(n, ct))
            } else {
                sub(dir, scale(n, 2.0 * dot(dir, n)))
            };
            // nudge off the surface to avoid re-hitting it
            pos = add(pos, scale(n, 1e-9));
        }
    });

    let escapes = traced.iter().filter(|(_, e)| *e).count();
    if escapes > 0 {
        log::warn!("{escapes} of {} rays escaped the geometry", config.n_rays);
    }
    if escapes as f64 > MAX_ESCAPE_FRACTION * config.n_rays as f64 {
        return Err(Error::Geometry(format!(
            "{escapes} of {} rays escaped; the room is not watertight",
            config.n_rays
        )));
    }
    let mut records: Vec<PathRecord> = traced.into_iter().flat_map(|(r, _)| r).collect();
    if room.visible(src, lst) {
        records.push(PathRecord::new(norm(sub(src, lst)), vec![0; n_mat], 1.0));
    }
    sort_records(&mut records);
    Ok(records)
}

/// Energy fraction carried by `p` in band `band`: air loss, spherical
/// spreading and the product of per-bounce reflectivities, times the
/// record's statistical weight.
pub fn path_energy(p: &PathRecord, materials: &[MaterialCoeffs], air: &AirModel, band: usize) -> f64 {
    let mut e = p.weight * (-air.gamma[band] * p.distance).exp() / (4.0 * PI * p.distance * p.distance);
    for (m, &n) in p.bounce_counts.iter().enumerate() {
        if n > 0 {
            e *= materials[m].reflectivity[band].powi(n as i32);
        }
    }
    e
}

/// Classical Sabine estimate; infinite when nothing absorbs.
pub fn sabine_t60(room: &RoomModel, band: usize) -> f64 {
    let absorption: f64 = room
        .planes
        .iter()
        .map(|p| p.area * (1.0 - room.materials[p.material].reflectivity[band]))
        .sum();
    if absorption <= 0.0 {
        return f64::INFINITY;
    }
    0.161 * room.volume_m3 / absorption
}

/// Energy arriving per sample, starting at the first record.
pub fn energy_histogram(records: &[PathRecord], materials: &[MaterialCoeffs], air: &AirModel, band: usize, sample_rate: u32) -> Vec<f64> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let fs = sample_rate as f64;
    let t0 = first.arrival_time;
    let last = records.iter().map(|r| r.arrival_time).fold(t0, f64::max);
    let mut h = vec![0.0; ((last - t0) * fs).round() as usize + 1];
    for r in records {
        h[((r.arrival_time - t0) * fs).round() as usize] += path_energy(r, materials, air, band);
    }
    h
}

/// T60 from the Schroeder curve of the traced energy histogram.
pub fn traced_t60(records: &[PathRecord], materials: &[MaterialCoeffs], air: &AirModel, band: usize, sample_rate: u32) -> Result<f64> {
    let h = energy_histogram(records, materials, air, band, sample_rate);
    schroeder_fit(&h, sample_rate as f64)
        .map(|f| -60.0 / f.slope_db_per_s)
        .map_err(Error::Unmeasurable)
}

/// Room file contents: geometry, materials and the source/listener pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: RoomModel,
    pub source: Vec3,
    pub listener: Vec3,
    pub air: AirModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaterialFile {
    reflectivity: [f64; N_BANDS],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlaneFile {
    vertices: Vec<Vec3>,
    material: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShoeboxFile {
    dims: Vec3,
    /// One material for every wall, or ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    material: Option<String>,
    /// ... one per wall in the order x0, xL, y0, yL, z0, zL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    walls: Option<[String; 6]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planes: Option<Vec<PlaneFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shoebox: Option<ShoeboxFile>,
    materials: BTreeMap<String, MaterialFile>,
    source: Vec3,
    listener: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    air: Option<AirModel>,
}

impl Scene {
    pub fn new(room: RoomModel, source: Vec3, listener: Vec3) -> Result<Self> {
        check_inside(&room, source, "source")?;
        check_inside(&room, listener, "listener")?;
        Ok(Self {
            room,
            source,
            listener,
            air: AirModel::default(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text)?;
        let names: Vec<String> = file.materials.keys().cloned().collect();
        let index = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Geometry(format!("unknown material {name:?}")))
        };
        let materials = file
            .materials
            .iter()
            .map(|(n, m)| MaterialCoeffs::new(n.clone(), m.reflectivity))
            .collect::<Result<Vec<_>>>()?;
        let room = match (file.planes, file.shoebox) {
            (Some(planes), None) => {
                let planes = planes
                    .into_iter()
                    .map(|p| Plane::new(p.vertices, index(&p.material)?))
                    .collect::<Result<Vec<_>>>()?;
                RoomModel::new(planes, materials)?
            }
            (None, Some(sb)) => {
                let walls = match (sb.material, sb.walls) {
                    (Some(m), None) => [index(&m)?; 6],
                    (None, Some(w)) => {
                        let mut out = [0; 6];
                        for (o, n) in out.iter_mut().zip(&w) {
                            *o = index(n)?;
                        }
                        out
                    }
                    _ => return Err(Error::Geometry("shoebox needs exactly one of `material` or `walls`".into())),
                };
                RoomModel::shoebox(sb.dims, walls, materials)?
            }
            _ => return Err(Error::Geometry("room file needs exactly one of `planes` or `shoebox`".into())),
        };
        let mut scene = Scene::new(room, file.source, file.listener)?;
        if let Some(air) = file.air {
            scene.air = AirModel::new(air.gamma)?;
        }
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let materials = self
            .room
            .materials
            .iter()
            .map(|m| {
                (
                    m.name.clone(),
                    MaterialFile {
                        reflectivity: m.reflectivity,
                    },
                )
            })
            .collect();
        let name = |i: usize| self.room.materials[i].name.clone();
        let (planes, shoebox) = match self.room.shoebox {
            Some(dims) => {
                let walls: [String; 6] = std::array::from_fn(|w| name(self.room.planes[w].material));
                let sb = if walls.iter().all(|w| *w == walls[0]) {
                    ShoeboxFile {
                        dims,
                        material: Some(walls[0].clone()),
                        walls: None,
                    }
                } else {
                    ShoeboxFile {
                        dims,
                        material: None,
                        walls: Some(walls),
                    }
                };
                (None, Some(sb))
            }
            None => (
                Some(
                    self.room
                        .planes
                        .iter()
                        .map(|p| PlaneFile {
                            vertices: p.vertices.clone(),
                            material: name(p.material),
                        })
                        .collect(),
                ),
                None,
            ),
        };
        let file = SceneFile {
            planes,
            shoebox,
            materials,
            source: self.source,
            listener: self.listener,
            air: Some(self.air.clone()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn trace(&self, config: &TraceConfig) -> Result<Vec<PathRecord>> {
        trace_stochastic(&self.room, self.source, self.listener, config)
    }
}
