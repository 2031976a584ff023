//! Quasi-static kinematic rover model: wheel tracking, least-squares body
//! twist with slip, explicit Euler pose integration and terrain-conforming
//! suspension.

mod camera;
mod sensors;
mod suspension;

pub use camera::{render_camera, visibility, CameraConfig, Channels, Image, ObjectKind, SceneObject};
pub use sensors::{read_sensors, SensorNoise, Sensors};
pub use suspension::{suspension_solve, wheel_centers, wheel_gaps, SuspensionError, SuspensionPose};

use nalgebra::{Matrix3, Vector3};
use scenelang::ModelTree;
use serde::{Deserialize, Serialize};

use crate::control::{pd_update, PdGains, PdState, WheelTargets};
use crate::terrain::Ground;

/// Wheel order used everywhere: FL, FR, ML, MR, RL, RR.
pub const WHEEL_NAMES: [&str; 6] = ["fl", "fr", "ml", "mr", "rl", "rr"];
/// Indices of the steered corner wheels, in steer-array order.
pub const CORNER_WHEELS: [usize; 4] = [0, 1, 4, 5];
pub const MIDDLE_WHEELS: [usize; 2] = [2, 3];

pub const DEFAULT_DT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverConfig {
    /// FL, FR, RL, RR in the body frame.
    pub corner_wheel_positions: [[f64; 2]; 4],
    /// ML, MR in the body frame.
    pub middle_wheel_positions: [[f64; 2]; 2],
    pub wheel_radius: f64,
    pub max_wheel_speed: f64,
    pub max_steer_angle: f64,
    pub max_steer_rate: f64,
    /// Height of the rocker pivot axis above the wheel centres.
    pub pivot_height: f64,
    /// Bogie pivot height relative to the rocker pivot (negative is below).
    pub bogie_pivot_z: f64,
    pub gains: PdGains,
    pub camera: CameraConfig,
}

impl Default for RoverConfig {
    fn default() -> Self {
        RoverConfig {
            corner_wheel_positions: [[1.0, 0.8], [1.0, -0.8], [-1.0, 0.8], [-1.0, -0.8]],
            middle_wheel_positions: [[0.0, 0.85], [0.0, -0.85]],
            wheel_radius: 0.15,
            max_wheel_speed: 12.0,
            max_steer_angle: 1.0,
            max_steer_rate: 1.5,
            pivot_height: 0.35,
            bogie_pivot_z: -0.15,
            gains: PdGains::default(),
            camera: CameraConfig::default(),
        }
    }
}

impl RoverConfig {
    /// Reads the geometry from a rover model tree. `prefix` is the instance
    /// path of the rover inside the tree (empty when the rover is the root).
    pub fn from_tree(tree: &ModelTree, prefix: &str) -> Option<Self> {
        let p = |name: &str| if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") };
        let n = |name: &str| tree.number(&p(name));
        let (a, ct, mt) = (n("half_wheelbase")?, n("corner_half_track")?, n("middle_half_track")?);
        let mut cfg = RoverConfig {
            corner_wheel_positions: [[a, ct], [a, -ct], [-a, ct], [-a, -ct]],
            middle_wheel_positions: [[0.0, mt], [0.0, -mt]],
            wheel_radius: n("wheel_radius")?,
            max_wheel_speed: n("max_wheel_speed")?,
            max_steer_angle: n("max_steer")?,
            pivot_height: n("pivot_height")?,
            ..RoverConfig::default()
        };
        if let Some(b) = tree.vec3(&p("bogie_offset")) {
            cfg.bogie_pivot_z = b[2];
        }
        if let (Some(w), Some(h), Some(f), Some(m)) =
            (n("camera.width"), n("camera.height"), n("camera.hfov"), n("camera.mount_height"))
        {
            cfg.camera.width = w as usize;
            cfg.camera.height = h as usize;
            cfg.camera.horizontal_fov = f;
            cfg.camera.mount_height = m;
        }
        Some(cfg)
    }

    /// Body-frame wheel positions in FL, FR, ML, MR, RL, RR order.
    pub fn wheel_positions(&self) -> [[f64; 2]; 6] {
        let c = &self.corner_wheel_positions;
        let m = &self.middle_wheel_positions;
        [c[0], c[1], m[0], m[1], c[2], c[3]]
    }

    pub fn max_rim_speed(&self) -> f64 {
        self.max_wheel_speed * self.wheel_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverState {
    /// Body origin (rocker pivot axis centre) in world coordinates.
    pub position: [f64; 3],
    pub heading: f64,
    /// Nose-up positive.
    pub pitch: f64,
    /// Left side up positive.
    pub roll: f64,
    /// Left, right. The differential bar keeps them opposite.
    pub rocker_angles: [f64; 2],
    pub bogie_angles: [f64; 2],
    pub steer_angles: [f64; 4],
    pub wheel_speeds: [f64; 6],
    /// Body-frame `(forward, lateral)` velocity, m/s.
    pub body_velocity: [f64; 2],
    pub yaw_rate: f64,
    pub time: f64,
    pub off_terrain: bool,
    pub pd: PdState,
}

impl RoverState {
    /// A rover at rest at `(x, y)` with the suspension conformed to `ground`.
    pub fn spawn(x: f64, y: f64, heading: f64, ground: &dyn Ground, cfg: &RoverConfig) -> Self {
        let mut s = RoverState {
            position: [x, y, 0.0],
            heading,
            pitch: 0.0,
            roll: 0.0,
            rocker_angles: [0.0; 2],
            bogie_angles: [0.0; 2],
            steer_angles: [0.0; 4],
            wheel_speeds: [0.0; 6],
            body_velocity: [0.0; 2],
            yaw_rate: 0.0,
            time: 0.0,
            off_terrain: false,
            pd: PdState::default(),
        };
        let h = ground.height(x, y).unwrap_or(0.0);
        s.position[2] = h + cfg.wheel_radius + cfg.pivot_height;
        match suspension_solve(&s, ground, cfg) {
            Ok(pose) => pose.apply(&mut s),
            Err(_) => s.off_terrain = ground.height(x, y).is_none(),
        }
        s
    }

    pub fn speed(&self) -> f64 {
        self.body_velocity[0].hypot(self.body_velocity[1])
    }

    /// World-frame wheel contact `(x, y)` positions, ignoring attitude.
    pub fn wheel_xy(&self, cfg: &RoverConfig) -> [[f64; 2]; 6] {
        let (s, c) = self.heading.sin_cos();
        let mut out = [[0.0; 2]; 6];
        for (k, [x, y]) in cfg.wheel_positions().into_iter().enumerate() {
            out[k] = [self.position[0] + c * x - s * y, self.position[1] + s * x + c * y];
        }
        out
    }

    /// Steer angle of wheel `w` (0 for middle wheels).
    pub fn wheel_steer(&self, w: usize) -> f64 {
        CORNER_WHEELS.iter().position(|&c| c == w).map(|k| self.steer_angles[k]).unwrap_or(0.0)
    }
}

/// Least-squares rigid twist `(vx, vy, ω)` best matching the wheel contact
/// velocities `v_i·(cos δ_i, sin δ_i)` at body positions `p_i`.
pub fn fit_twist(positions: &[[f64; 2]; 6], velocities: &[[f64; 2]; 6]) -> [f64; 3] {
    // Wheel velocity of the twist: (vx − ω·y, vy + ω·x).
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (p, v) in positions.iter().zip(velocities) {
        let rows = [Vector3::new(1.0, 0.0, -p[1]), Vector3::new(0.0, 1.0, p[0])];
        for (row, target) in rows.iter().zip(v) {
            a += row * row.transpose();
            b += row * *target;
        }
    }
    let x = a.lu().solve(&b).unwrap_or_else(Vector3::zeros);
    [x[0], x[1], x[2]]
}

/// Advances the rover by `dt` seconds towards `cmd`.
pub fn step(state: &RoverState, cmd: &WheelTargets, ground: &dyn Ground, cfg: &RoverConfig, dt: f64) -> RoverState {
    let mut s = state.clone();
    let mut target = *cmd;
    for v in target.steer.iter_mut() {
        *v = v.clamp(-cfg.max_steer_angle, cfg.max_steer_angle);
    }
    for v in target.speed.iter_mut() {
        *v = v.clamp(-cfg.max_wheel_speed, cfg.max_wheel_speed);
    }
    let rates = pd_update(&s.steer_angles, &s.wheel_speeds, &target, &cfg.gains, &mut s.pd, cfg.max_steer_rate, dt);
    for k in 0..4 {
        s.steer_angles[k] = (s.steer_angles[k] + rates.steer_rate[k] * dt).clamp(-cfg.max_steer_angle, cfg.max_steer_angle);
    }
    for w in 0..6 {
        s.wheel_speeds[w] = (s.wheel_speeds[w] + rates.wheel_accel[w] * dt).clamp(-cfg.max_wheel_speed, cfg.max_wheel_speed);
    }
    s.time = state.time + dt;

    let positions = cfg.wheel_positions();
    let world = s.wheel_xy(cfg);
    let mut velocities = [[0.0; 2]; 6];
    for w in 0..6 {
        let delta = s.wheel_steer(w);
        let rim = s.wheel_speeds[w] * cfg.wheel_radius;
        let travel = s.heading + delta + if rim < 0.0 { std::f64::consts::PI } else { 0.0 };
        let (slip, rr) = ground.slip(world[w][0], world[w][1], travel).unwrap_or((0.0, 0.0));
        let v = rim * (1.0 - slip) * (1.0 - rr);
        velocities[w] = [v * delta.cos(), v * delta.sin()];
    }
    let [vx, vy, wz] = fit_twist(&positions, &velocities);
    s.body_velocity = [vx, vy];
    s.yaw_rate = wz;

    if state.off_terrain {
        s.body_velocity = [0.0; 2];
        s.yaw_rate = 0.0;
        return s;
    }
    let (sh, ch) = state.heading.sin_cos();
    let horizontal = state.pitch.cos();
    let mut next = s.clone();
    next.position[0] += dt * horizontal * (ch * vx - sh * vy);
    next.position[1] += dt * horizontal * (sh * vx + ch * vy);
    next.heading = state.heading + dt * wz;

    if next.wheel_xy(cfg).iter().any(|[x, y]| ground.height(*x, *y).is_none()) {
        s.off_terrain = true;
        s.body_velocity = [0.0; 2];
        s.yaw_rate = 0.0;
        return s;
    }
    match suspension_solve(&next, ground, cfg) {
        Ok(pose) => pose.apply(&mut next),
        Err(e) => log::debug!("suspension kept previous pose: {e}"),
    }
    next
}

/// Planar distance and the absolute heading error from the rover to `target`.
pub fn range_and_bearing(state: &RoverState, target: [f64; 2]) -> (f64, f64) {
    let dx = target[0] - state.position[0];
    let dy = target[1] - state.position[1];
    let bearing = crate::wrap_angle(dy.atan2(dx) - state.heading);
    (dx.hypot(dy), bearing)
}
