//! Ego camera: a column-marched heightfield with Lambert shading and hard
//! shadows, plus flat-coloured billboards for scene objects.
//!
//! Terrain and sky are pure gray, so every non-gray pixel belongs to exactly
//! one object class.

use std::io::Cursor;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{RoverConfig, RoverState};
use crate::terrain::{Ground, SunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    Rgb,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub horizontal_fov: f64,
    /// Lens height above the ground under the rover origin.
    pub mount_height: f64,
    pub channels: Channels,
    pub shadows: bool,
    pub far: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 128,
            height: 128,
            horizontal_fov: std::f64::consts::FRAC_PI_2,
            mount_height: 1.2,
            channels: Channels::Rgb,
            shadows: true,
            far: 80.0,
        }
    }
}

impl CameraConfig {
    pub fn is_valid(&self) -> bool {
        self.width >= 16 && self.height >= 16 && self.horizontal_fov > 0.0 && self.horizontal_fov < std::f64::consts::PI
    }

    fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.horizontal_fov).tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectKind {
    Astronaut,
    Antenna,
    Rover,
    Rock,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [ObjectKind::Astronaut, ObjectKind::Antenna, ObjectKind::Rover, ObjectKind::Rock];

    pub fn color(self) -> [u8; 3] {
        match self {
            ObjectKind::Astronaut => [40, 90, 230],
            ObjectKind::Antenna => [196, 196, 214],
            ObjectKind::Rover => [214, 170, 40],
            ObjectKind::Rock => [150, 112, 80],
        }
    }

    /// Billboard `(width, height)` in metres.
    pub fn size(self) -> (f64, f64) {
        match self {
            ObjectKind::Astronaut => (0.8, 1.9),
            ObjectKind::Antenna => (2.6, 3.2),
            ObjectKind::Rover => (2.2, 1.6),
            ObjectKind::Rock => (1.4, 1.0),
        }
    }

    /// Silhouette test in billboard coordinates: `s ∈ [−0.5, 0.5]` across,
    /// `t ∈ [0, 1]` from the ground up.
    fn covers(self, s: f64, t: f64) -> bool {
        let ellipse = |cs: f64, ct: f64, rs: f64, rt: f64| ((s - cs) / rs).powi(2) + ((t - ct) / rt).powi(2) <= 1.0;
        match self {
            ObjectKind::Astronaut => {
                (t < 0.45 && s.abs() > 0.06 && s.abs() < 0.32)
                    || ((0.45..0.8).contains(&t) && s.abs() < 0.42)
                    || ellipse(0.0, 0.89, 0.2, 0.11)
            }
            ObjectKind::Antenna => (t < 0.6 && s.abs() < 0.05) || ellipse(0.0, 0.78, 0.5, 0.2),
            ObjectKind::Rover => {
                ((0.22..0.75).contains(&t) && s.abs() < 0.5)
                    || ellipse(-0.32, 0.14, 0.14, 0.14)
                    || ellipse(0.32, 0.14, 0.14, 0.14)
                    || ((0.75..1.0).contains(&t) && (s + 0.3).abs() < 0.04)
            }
            ObjectKind::Rock => ellipse(0.0, 0.45, 0.5, 0.45) && t >= 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Astronaut => "Astronaut",
            ObjectKind::Antenna => "Antenna",
            ObjectKind::Rover => "Rover",
            ObjectKind::Rock => "Rock",
        }
    }

    /// Case-sensitive inverse of [`ObjectKind::name`].
    pub fn from_name(name: &str) -> Option<ObjectKind> {
        ObjectKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn from_color(c: [u8; 3]) -> Option<ObjectKind> {
        ObjectKind::ALL.into_iter().find(|k| k.color() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    /// Ground position; `z` is ignored and taken from the terrain.
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    fn rgb(width: usize, height: usize) -> Self {
        Image { width, height, channels: 3, data: vec![0; width * height * 3] }
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[u8] {
        let k = (v * self.width + u) * self.channels;
        &self.data[k..k + self.channels]
    }

    fn put(&mut self, u: usize, v: usize, c: [u8; 3]) {
        let k = (v * self.width + u) * 3;
        self.data[k..k + 3].copy_from_slice(&c);
    }

    /// Number of pixels of an object class (RGB images only).
    pub fn class_pixels(&self, kind: ObjectKind) -> usize {
        if self.channels != 3 {
            return 0;
        }
        self.data.chunks_exact(3).filter(|p| *p == kind.color()).count()
    }

    /// Mean `(u, v)` of an object class's pixels.
    pub fn class_centroid(&self, kind: ObjectKind) -> Option<(f64, f64)> {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for v in 0..self.height {
            for u in 0..self.width {
                if self.channels == 3 && self.pixel(u, v) == kind.color() {
                    su += u as f64;
                    sv += v as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (su / n as f64, sv / n as f64))
    }

    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
            .collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Pixel values scaled to `[0, 1]`, channel-interleaved.
    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        let color = if self.channels == 3 { image::ExtendedColorType::Rgb8 } else { image::ExtendedColorType::L8 };
        let mut out = Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .expect("in-memory png encoding");
        out.into_inner()
    }
}

struct View {
    eye: Vector3<f64>,
    forward: [f64; 2],
    left: [f64; 2],
    focal: f64,
    w: usize,
    h: usize,
}

impl View {
    fn new(state: &RoverState, ground: &dyn Ground, rover: &RoverConfig, cam: &CameraConfig) -> Self {
        let base = ground
            .height(state.position[0], state.position[1])
            .unwrap_or(state.position[2] - rover.wheel_radius - rover.pivot_height);
        let (s, c) = state.heading.sin_cos();
        View {
            eye: Vector3::new(state.position[0], state.position[1], base + cam.mount_height),
            forward: [c, s],
            left: [-s, c],
            focal: cam.focal(),
            w: cam.width,
            h: cam.height,
        }
    }

    /// Camera-frame `(depth, lateral, up)` of a world point.
    fn to_camera(&self, p: Vector3<f64>) -> (f64, f64, f64) {
        let d = p - self.eye;
        (d.x * self.forward[0] + d.y * self.forward[1], d.x * self.left[0] + d.y * self.left[1], d.z)
    }

    fn column(&self, y_over_x: f64) -> f64 {
        0.5 * self.w as f64 - self.focal * y_over_x
    }

    fn row(&self, z_over_x: f64) -> f64 {
        0.5 * self.h as f64 - self.focal * z_over_x
    }
}

const NEAR: f64 = 0.2;

/// Per-pixel terrain depth (infinite for sky) and gray level.
fn terrain_pass(view: &View, ground: &dyn Ground, sun: &SunConfig, cam: &CameraConfig) -> (Vec<f64>, Vec<u8>) {
    let (w, h) = (view.w, view.h);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut shade = vec![0u8; w * h];
    let sun_dir = sun.direction();
    for u in 0..w {
        let lateral = (0.5 * w as f64 - (u as f64 + 0.5)) / view.focal;
        let mut ybuf = h as f64;
        let mut x = NEAR;
        while x < cam.far && ybuf > 0.0 {
            let px = view.eye.x + x * (view.forward[0] + lateral * view.left[0]);
            let py = view.eye.y + x * (view.forward[1] + lateral * view.left[1]);
            let Some(hz) = ground.height(px, py) else { break };
            let v = view.row((hz - view.eye.z) / x);
            if v < ybuf {
                let [gx, gy] = ground.gradient(px, py);
                let n = Vector3::new(-gx, -gy, 1.0).normalize();
                let lit = !cam.shadows || !in_shadow(ground, Vector3::new(px, py, hz), &sun_dir);
                let level = if lit { 30.0 + 190.0 * n.dot(&sun_dir).max(0.0) } else { 16.0 };
                let top = v.max(0.0).ceil() as usize;
                for row in top..(ybuf.ceil() as usize).min(h) {
                    depth[row * w + u] = x;
                    shade[row * w + u] = level.round() as u8;
                }
                ybuf = v;
            }
            x += (0.01 * x).max(0.05);
        }
    }
    (depth, shade)
}

fn in_shadow(ground: &dyn Ground, p: Vector3<f64>, sun: &Vector3<f64>) -> bool {
    if sun.z <= 0.0 {
        return true;
    }
    (1..=12).any(|k| {
        let q = p + sun * (0.6 * k as f64);
        ground.height(q.x, q.y).is_some_and(|hz| hz > q.z + 1e-3)
    })
}

/// Pixel footprint of a billboard: `(pixel index, depth)` pairs, unclipped by
/// terrain.
fn billboard_pixels(view: &View, ground: &dyn Ground, obj: &SceneObject) -> Option<(f64, Vec<usize>)> {
    let base = ground.height(obj.position[0], obj.position[1]).unwrap_or(0.0);
    let (x, y, z) = view.to_camera(Vector3::new(obj.position[0], obj.position[1], base));
    if x <= NEAR {
        return None;
    }
    let (bw, bh) = obj.kind.size();
    let left = view.column((y + 0.5 * bw) / x);
    let right = view.column((y - 0.5 * bw) / x);
    let bottom = view.row(z / x);
    let top = view.row((z + bh) / x);
    let u0 = left.floor().max(0.0) as usize;
    let u1 = (right.ceil().max(0.0) as usize).min(view.w);
    let v0 = top.floor().max(0.0) as usize;
    let v1 = (bottom.ceil().max(0.0) as usize).min(view.h);
    let mut pixels = Vec::new();
    for v in v0..v1 {
        let t = (bottom - (v as f64 + 0.5)) / (bottom - top);
        for u in u0..u1 {
            let s = ((u as f64 + 0.5) - left) / (right - left) - 0.5;
            if (0.0..=1.0).contains(&t) && obj.kind.covers(s, t) {
                pixels.push(v * view.w + u);
            }
        }
    }
    Some((x, pixels))
}

/// Objects sorted far to near with their unoccluded-by-terrain pixels.
fn object_layers(view: &View, ground: &dyn Ground, objects: &[SceneObject], depth: &[f64]) -> Vec<(usize, Vec<usize>)> {
    let mut layers: Vec<(f64, usize, Vec<usize>)> = objects
        .iter()
        .enumerate()
        .filter_map(|(k, o)| {
            let (d, px) = billboard_pixels(view, ground, o)?;
            Some((d, k, px.into_iter().filter(|&p| d < depth[p]).collect()))
        })
        .collect();
    layers.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    layers.into_iter().map(|(_, k, px)| (k, px)).collect()
}

pub fn render_camera(
    state: &RoverState,
    objects: &[SceneObject],
    ground: &dyn Ground,
    sun: &SunConfig,
    rover: &RoverConfig,
) -> Image {
    let cam = &rover.camera;
    let view = View::new(state, ground, rover, cam);
    let (depth, shade) = terrain_pass(&view, ground, sun, cam);
    let mut img = Image::rgb(cam.width, cam.height);
    for (p, &g) in shade.iter().enumerate() {
        img.put(p % cam.width, p / cam.width, [g; 3]);
    }
    for (k, pixels) in object_layers(&view, ground, objects, &depth) {
        let c = objects[k].kind.color();
        for p in pixels {
            img.put(p % cam.width, p / cam.width, c);
        }
    }
    match cam.channels {
        Channels::Rgb => img,
        Channels::Gray => img.to_gray(),
    }
}

/// Frustum and occlusion test per object: true when at least one of its
/// pixels survives terrain and nearer objects.
pub fn visibility(state: &RoverState, objects: &[SceneObject], ground: &dyn Ground, rover: &RoverConfig) -> Vec<bool> {
    let cam = &rover.camera;
    let view = View::new(state, ground, rover, cam);
    let (depth, _) = terrain_pass(&view, ground, &SunConfig::default(), &CameraConfig { shadows: false, ..*cam });
    let layers = object_layers(&view, ground, objects, &depth);
    let mut visible = vec![false; objects.len()];
    for (i, (k, pixels)) in layers.iter().enumerate() {
        let nearer: std::collections::HashSet<usize> = layers[i + 1..].iter().flat_map(|(_, p)| p.iter().copied()).collect();
        visible[*k] = pixels.iter().any(|p| !nearer.contains(p));
    }
    visible
}
