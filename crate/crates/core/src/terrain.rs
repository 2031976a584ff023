//! Heightfield terrain with procedural craters, regolith parameters, mass
//! accounting for excavation and slope-based slip.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TerrainError {
    #[error("point ({x:.3}, {y:.3}) is outside the terrain")]
    OutOfBounds { x: f64, y: f64 },
    #[error("crater at ({x:.3}, {y:.3}) lies outside the terrain extent")]
    CraterOutsideExtent { x: f64, y: f64 },
    #[error("invalid terrain parameters: {0}")]
    InvalidSpec(String),
}

/// Bulk soil properties. Angles are in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegolithParams {
    pub internal_friction: f64,
    pub cohesion: f64,
    pub dilatancy: f64,
    pub mass_density: f64,
    pub compression_index: f64,
}

impl Default for RegolithParams {
    fn default() -> Self {
        RegolithParams {
            internal_friction: 35f64.to_radians(),
            cohesion: 500.0,
            dilatancy: 5f64.to_radians(),
            mass_density: 1500.0,
            compression_index: 0.3,
        }
    }
}

impl RegolithParams {
    pub fn validate(&self) -> Result<(), TerrainError> {
        let phi = self.internal_friction;
        if !(phi > 0.0 && phi < std::f64::consts::FRAC_PI_2) {
            return Err(TerrainError::InvalidSpec(format!("internal friction {phi} rad outside (0, pi/2)")));
        }
        if !(self.mass_density > 0.0) {
            return Err(TerrainError::InvalidSpec("mass density must be positive".into()));
        }
        if !(self.cohesion >= 0.0) {
            return Err(TerrainError::InvalidSpec("cohesion must be non-negative".into()));
        }
        Ok(())
    }

    /// Rolling resistance coefficient of a wheel on this soil.
    pub fn rolling_resistance(&self) -> f64 {
        (0.02 + 0.05 * self.compression_index).clamp(0.0, 0.5)
    }
}

/// Sun direction, used only for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunConfig {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Default for SunConfig {
    fn default() -> Self {
        SunConfig { azimuth: 135f64.to_radians(), elevation: 20f64.to_radians() }
    }
}

impl SunConfig {
    /// Unit vector pointing from the ground towards the sun.
    pub fn direction(&self) -> Vector3<f64> {
        let e = self.elevation.clamp(0.0, std::f64::consts::FRAC_PI_2);
        Vector3::new(e.cos() * self.azimuth.cos(), e.cos() * self.azimuth.sin(), e.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraterSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub depth: f64,
}

impl CraterSpec {
    /// Radial profile: parabolic bowl reaching `0.2·depth` at the radius,
    /// then a rim falling linearly to zero at `1.5·radius`.
    pub fn profile(&self, r: f64) -> f64 {
        let (big_r, d) = (self.radius, self.depth);
        if r < big_r {
            let s = r / big_r;
            -d + 1.2 * d * s * s
        } else if r < 1.5 * big_r {
            0.2 * d * (1.5 * big_r - r) / (0.5 * big_r)
        } else {
            0.0
        }
    }
}

/// Everything needed to generate a terrain. The field is centred on the
/// world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub size_x: f64,
    pub size_y: f64,
    pub cell_size: f64,
    pub craters: Vec<CraterSpec>,
    /// Peak amplitude of the base noise, at most 0.05 m.
    pub noise_amplitude: f64,
    /// Constant slope rising along +x, radians.
    pub slope: f64,
    pub regolith: RegolithParams,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        TerrainSpec {
            size_x: 80.0,
            size_y: 80.0,
            cell_size: 0.25,
            craters: Vec::new(),
            noise_amplitude: 0.03,
            slope: 0.0,
            regolith: RegolithParams::default(),
        }
    }
}

pub const MAX_NOISE_AMPLITUDE: f64 = 0.05;
const NOISE_SPACING: f64 = 4.0;

/// Regular grid of heights at nodes `origin + (i, j)·cell_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `heights[j * nx + i]`.
    pub heights: Vec<f64>,
    pub regolith: RegolithParams,
    pub removed_mass: f64,
}

pub fn generate_terrain(spec: &TerrainSpec, seed: u64) -> Result<Heightfield, TerrainError> {
    let c = spec.cell_size;
    if !(c > 0.0) || !(spec.size_x >= 2.0 * c) || !(spec.size_y >= 2.0 * c) {
        return Err(TerrainError::InvalidSpec("extent must span at least two cells".into()));
    }
    if !(0.0..=MAX_NOISE_AMPLITUDE).contains(&spec.noise_amplitude) {
        return Err(TerrainError::InvalidSpec(format!("noise amplitude must lie in [0, {MAX_NOISE_AMPLITUDE}]")));
    }
    spec.regolith.validate()?;
    let (hx, hy) = (spec.size_x / 2.0, spec.size_y / 2.0);
    for cr in &spec.craters {
        let [x, y] = cr.center;
        if x < -hx || x > hx || y < -hy || y > hy {
            return Err(TerrainError::CraterOutsideExtent { x, y });
        }
        if !(cr.radius > 2.0 * c) {
            return Err(TerrainError::InvalidSpec(format!("crater radius {} must exceed two cells", cr.radius)));
        }
        if !(cr.depth >= 0.0 && cr.depth < cr.radius) {
            return Err(TerrainError::InvalidSpec(format!("crater depth {} must be below its radius", cr.depth)));
        }
    }

    let nx = (spec.size_x / c).round() as usize + 1;
    let ny = (spec.size_y / c).round() as usize + 1;
    let origin = [-hx, -hy];
    let noise = ValueNoise::new(seed, spec.size_x, spec.size_y, spec.noise_amplitude);
    let tan_slope = spec.slope.tan();
    let mut heights = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let x = origin[0] + i as f64 * c;
            let y = origin[1] + j as f64 * c;
            let mut h = tan_slope * x + noise.at(x - origin[0], y - origin[1]);
            for cr in &spec.craters {
                let r = ((x - cr.center[0]).powi(2) + (y - cr.center[1]).powi(2)).sqrt();
                h += cr.profile(r);
            }
            heights[j * nx + i] = h;
        }
    }
    Ok(Heightfield { origin, cell_size: c, nx, ny, heights, regolith: spec.regolith, removed_mass: 0.0 })
}

/// Smoothly interpolated lattice noise in `[-amplitude, amplitude]`.
struct ValueNoise {
    nx: usize,
    values: Vec<f64>,
    amplitude: f64,
}

impl ValueNoise {
    fn new(seed: u64, sx: f64, sy: f64, amplitude: f64) -> Self {
        let nx = (sx / NOISE_SPACING).ceil() as usize + 2;
        let ny = (sy / NOISE_SPACING).ceil() as usize + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..nx * ny).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        ValueNoise { nx, values, amplitude }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let (gu, gv) = (u / NOISE_SPACING, v / NOISE_SPACING);
        let (i, j) = (gu.floor() as usize, gv.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fu, fv) = (smooth(gu - i as f64), smooth(gv - j as f64));
        let val = |a: usize, b: usize| self.values[b * self.nx + a];
        let top = val(i, j) * (1.0 - fu) + val(i + 1, j) * fu;
        let bottom = val(i, j + 1) * (1.0 - fu) + val(i + 1, j + 1) * fu;
        self.amplitude * (top * (1.0 - fv) + bottom * fv)
    }
}

impl Heightfield {
    /// A level field of the given size centred at the origin.
    pub fn flat(size_x: f64, size_y: f64, cell_size: f64) -> Self {
        let spec = TerrainSpec { size_x, size_y, cell_size, noise_amplitude: 0.0, ..TerrainSpec::default() };
        generate_terrain(&spec, 0).expect("flat terrain spec is valid")
    }

    pub fn max_x(&self) -> f64 {
        self.origin[0] + (self.nx - 1) as f64 * self.cell_size
    }

    pub fn max_y(&self) -> f64 {
        self.origin[1] + (self.ny - 1) as f64 * self.cell_size
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.origin[0] && x <= self.max_x() && y >= self.origin[1] && y <= self.max_y()
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + i as f64 * self.cell_size, self.origin[1] + j as f64 * self.cell_size]
    }

    /// Bilinear height, or `None` outside the field.
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        Some(self.height_clamped(x, y))
    }

    /// Bilinear height with the query clamped into the field.
    pub fn height_clamped(&self, x: f64, y: f64) -> f64 {
        let u = ((x - self.origin[0]) / self.cell_size).clamp(0.0, (self.nx - 1) as f64);
        let v = ((y - self.origin[1]) / self.cell_size).clamp(0.0, (self.ny - 1) as f64);
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let h00 = self.node(i, j);
        let h10 = self.node(i + 1, j);
        let h01 = self.node(i, j + 1);
        let h11 = self.node(i + 1, j + 1);
        if fu == 0.0 && fv == 0.0 {
            return h00;
        }
        (h00 * (1.0 - fu) + h10 * fu) * (1.0 - fv) + (h01 * (1.0 - fu) + h11 * fu) * fv
    }

    /// Height gradient `(dh/dx, dh/dy)` by central differences of one cell.
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let c = self.cell_size;
        let gx = (self.height_clamped(x + c, y) - self.height_clamped(x - c, y)) / (2.0 * c);
        let gy = (self.height_clamped(x, y + c) - self.height_clamped(x, y - c)) / (2.0 * c);
        [gx, gy]
    }

    /// Height and unit surface normal at `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> Result<(f64, Vector3<f64>), TerrainError> {
        let h = self.height(x, y).ok_or(TerrainError::OutOfBounds { x, y })?;
        let [gx, gy] = self.gradient(x, y);
        Ok((h, Vector3::new(-gx, -gy, 1.0).normalize()))
    }

    /// Volume above the zero level, `Σ h·cell²` over all nodes.
    pub fn volume(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.cell_size * self.cell_size
    }

    /// Node index range of a square tool footprint of side `side` centred
    /// near `(x, y)`.
    pub fn footprint(&self, x: f64, y: f64, side: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = ((side / self.cell_size).round() as usize).max(1);
        let start = |p: f64, o: f64, len: usize| {
            let centre = (p - o) / self.cell_size;
            let s = (centre - (n as f64 - 1.0) / 2.0).round().max(0.0) as usize;
            s.min(len.saturating_sub(n))
        };
        let i0 = start(x, self.origin[0], self.nx);
        let j0 = start(y, self.origin[1], self.ny);
        (i0..(i0 + n).min(self.nx), j0..(j0 + n).min(self.ny))
    }

    /// Lowers a 0.5 m square footprint by `target_depth`, removing at most
    /// `bucket_capacity` kg. Returns the removed mass.
    pub fn excavate(&mut self, x: f64, y: f64, target_depth: f64, bucket_capacity: f64) -> Result<f64, TerrainError> {
        self.excavate_with(x, y, bucket_capacity, |h| h - target_depth.max(0.0))
    }

    /// Lowers the footprint towards the absolute height `level`, never
    /// raising it. Returns the removed mass.
    pub fn excavate_to(&mut self, x: f64, y: f64, level: f64, bucket_capacity: f64) -> Result<f64, TerrainError> {
        self.excavate_with(x, y, bucket_capacity, |h| h.min(level))
    }

    fn excavate_with(&mut self, x: f64, y: f64, capacity: f64, target: impl Fn(f64) -> f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let (ri, rj) = self.footprint(x, y, 0.5);
        let area = self.cell_size * self.cell_size;
        let rho = self.regolith.mass_density;
        let mut cuts = Vec::new();
        let mut mass = 0.0;
        for j in rj {
            for i in ri.clone() {
                let h = self.node(i, j);
                let dh = (h - target(h)).max(0.0);
                if dh > 0.0 {
                    cuts.push((j * self.nx + i, dh));
                    mass += dh * area * rho;
                }
            }
        }
        let scale = if mass > capacity.max(0.0) { capacity.max(0.0) / mass } else { 1.0 };
        let mut removed = 0.0;
        for (k, dh) in cuts {
            let dh = dh * scale;
            let before = self.heights[k];
            self.heights[k] = before - dh;
            removed += (before - self.heights[k]) * area * rho;
        }
        self.removed_mass += removed;
        Ok(removed)
    }

    /// `(slip, rolling_resistance)` for a wheel heading along `heading`.
    pub fn slip_at(&self, x: f64, y: f64, heading: f64) -> Result<(f64, f64), TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let [gx, gy] = self.gradient(x, y);
        let uphill = gx * heading.cos() + gy * heading.sin();
        let slip = (uphill / self.regolith.internal_friction.tan()).clamp(0.0, 0.9);
        Ok((slip, self.regolith.rolling_resistance()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("heightfield serializes")
    }
}

/// Read access used by the vehicle model. Wrappers override mobility for
/// controlled experiments.
pub trait Ground: Sync {
    fn height(&self, x: f64, y: f64) -> Option<f64>;
    fn gradient(&self, x: f64, y: f64) -> [f64; 2];
    fn slip(&self, x: f64, y: f64, heading: f64) -> Option<(f64, f64)>;
}

impl Ground for Heightfield {
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        Heightfield::height(self, x, y)
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        Heightfield::gradient(self, x, y)
    }

    fn slip(&self, x: f64, y: f64, heading: f64) -> Option<(f64, f64)> {
        self.slip_at(x, y, heading).ok()
    }
}

/// Same geometry, but wheels neither slip nor lose speed to rolling
/// resistance.
pub struct Lossless<'a, G: Ground>(pub &'a G);

impl<G: Ground> Ground for Lossless<'_, G> {
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.0.height(x, y)
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        self.0.gradient(x, y)
    }

    fn slip(&self, x: f64, y: f64, _heading: f64) -> Option<(f64, f64)> {
        self.0.height(x, y).map(|_| (0.0, 0.0))
    }
}

/// Same geometry with a fixed slip ratio on every wheel and no rolling
/// resistance.
pub struct ForcedSlip<'a, G: Ground> {
    pub inner: &'a G,
    pub slip: f64,
}

impl<G: Ground> Ground for ForcedSlip<'_, G> {
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        self.inner.height(x, y)
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        self.inner.gradient(x, y)
    }

    fn slip(&self, x: f64, y: f64, _heading: f64) -> Option<(f64, f64)> {
        self.inner.height(x, y).map(|_| (self.slip, 0.0))
    }
}
