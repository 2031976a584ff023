use nalgebra::{Rotation3, SMatrix, SVector, Vector3};
use thiserror::Error;

use super::{RoverConfig, RoverState};
use crate::terrain::Ground;

const JOINT_LIMIT: f64 = 0.8;
const ATTITUDE_LIMIT: f64 = 1.0;
const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 60;
const FD_STEP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuspensionError {
    #[error("wheel {0} is outside the terrain")]
    OffTerrain(usize),
    #[error("suspension solve failed (residual {residual:.3e} after {iterations} iterations)")]
    SolveFailed { residual: f64, iterations: usize },
}

/// Body height and attitude plus joint angles that put every wheel on the
/// ground. Right rocker angle is always the negated left one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuspensionPose {
    pub z: f64,
    pub pitch: f64,
    pub roll: f64,
    pub rocker: f64,
    pub bogie: [f64; 2],
}

impl SuspensionPose {
    fn from_state(s: &RoverState) -> Self {
        SuspensionPose { z: s.position[2], pitch: s.pitch, roll: s.roll, rocker: s.rocker_angles[0], bogie: s.bogie_angles }
    }

    fn to_vec(self) -> SVector<f64, 6> {
        SVector::from([self.z, self.pitch, self.roll, self.rocker, self.bogie[0], self.bogie[1]])
    }

    fn from_vec(v: &SVector<f64, 6>) -> Self {
        SuspensionPose { z: v[0], pitch: v[1], roll: v[2], rocker: v[3], bogie: [v[4], v[5]] }
    }

    pub fn apply(&self, s: &mut RoverState) {
        s.position[2] = self.z;
        s.pitch = self.pitch;
        s.roll = self.roll;
        s.rocker_angles = [self.rocker, -self.rocker];
        s.bogie_angles = self.bogie;
    }
}

/// Rotation about the body y axis; positive angles move +x downwards.
fn rot_y(angle: f64, x: f64, z: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x + s * z, -s * x + c * z)
}

/// Body-frame wheel centres (x, y, z) for the given joint angles.
fn body_wheel_centers(cfg: &RoverConfig, rocker: [f64; 2], bogie: [f64; 2]) -> [Vector3<f64>; 6] {
    let p = cfg.wheel_positions();
    let h = cfg.pivot_height;
    let mut out = [Vector3::zeros(); 6];
    for side in 0..2 {
        let (front, mid, rear) = (side, 2 + side, 4 + side);
        let (x, z) = rot_y(rocker[side], p[front][0], -h);
        out[front] = Vector3::new(x, p[front][1], z);
        let bx = 0.5 * (p[mid][0] + p[rear][0]);
        let half = 0.5 * (p[mid][0] - p[rear][0]);
        let drop = h + cfg.bogie_pivot_z;
        for (w, dx) in [(mid, half), (rear, -half)] {
            let (ox, oz) = rot_y(bogie[side], dx, -drop);
            let (x, z) = rot_y(rocker[side], bx + ox, cfg.bogie_pivot_z + oz);
            out[w] = Vector3::new(x, p[w][1], z);
        }
    }
    out
}

fn attitude(heading: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), heading)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), -pitch)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), roll)
}

/// World-frame wheel centres for the current state.
pub fn wheel_centers(s: &RoverState, cfg: &RoverConfig) -> [Vector3<f64>; 6] {
    let r = attitude(s.heading, s.pitch, s.roll);
    let origin = Vector3::from(s.position);
    body_wheel_centers(cfg, s.rocker_angles, s.bogie_angles).map(|c| origin + r * c)
}

/// Signed gap between each wheel rim and the ground, measured along the
/// ground normal.
fn gaps(s: &RoverState, pose: &SuspensionPose, ground: &dyn Ground, cfg: &RoverConfig) -> Result<SVector<f64, 6>, SuspensionError> {
    let r = attitude(s.heading, pose.pitch, pose.roll);
    let origin = Vector3::new(s.position[0], s.position[1], pose.z);
    let centers = body_wheel_centers(cfg, [pose.rocker, -pose.rocker], pose.bogie);
    let mut out = SVector::zeros();
    for (w, c) in centers.iter().enumerate() {
        let c = origin + r * c;
        let h = ground.height(c.x, c.y).ok_or(SuspensionError::OffTerrain(w))?;
        let [gx, gy] = ground.gradient(c.x, c.y);
        let nz = 1.0 / (1.0 + gx * gx + gy * gy).sqrt();
        out[w] = (c.z - h) * nz - cfg.wheel_radius;
    }
    Ok(out)
}

/// Wheel-ground gaps of a state as it stands.
pub fn wheel_gaps(s: &RoverState, ground: &dyn Ground, cfg: &RoverConfig) -> Result<[f64; 6], SuspensionError> {
    gaps(s, &SuspensionPose::from_state(s), ground, cfg).map(|g| g.into())
}

/// Newton solve for body height, attitude and joint angles, starting from
/// the state's current values.
pub fn suspension_solve(s: &RoverState, ground: &dyn Ground, cfg: &RoverConfig) -> Result<SuspensionPose, SuspensionError> {
    let mut x = SuspensionPose::from_state(s).to_vec();
    let f = |v: &SVector<f64, 6>| gaps(s, &SuspensionPose::from_vec(v), ground, cfg);
    let mut res = f(&x)?;
    let mut iterations = 0;
    while res.amax() > TOLERANCE {
        if iterations == MAX_ITERATIONS {
            return Err(SuspensionError::SolveFailed { residual: res.amax(), iterations });
        }
        iterations += 1;
        let mut jac = SMatrix::<f64, 6, 6>::zeros();
        for k in 0..6 {
            let mut hi = x;
            let mut lo = x;
            hi[k] += FD_STEP;
            lo[k] -= FD_STEP;
            jac.set_column(k, &((f(&hi)? - f(&lo)?) / (2.0 * FD_STEP)));
        }
        let Some(delta) = jac.lu().solve(&-res) else {
            return Err(SuspensionError::SolveFailed { residual: res.amax(), iterations });
        };
        let mut t = 1.0;
        loop {
            let cand = x + delta * t;
            if let Ok(r) = f(&cand) {
                if r.norm() < res.norm() || t < 1e-3 {
                    x = cand;
                    res = r;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-3 {
                return Err(SuspensionError::SolveFailed { residual: res.amax(), iterations });
            }
        }
    }
    let pose = SuspensionPose::from_vec(&x);
    let within = pose.rocker.abs() <= JOINT_LIMIT
        && pose.bogie.iter().all(|b| b.abs() <= JOINT_LIMIT)
        && pose.pitch.abs() <= ATTITUDE_LIMIT
        && pose.roll.abs() <= ATTITUDE_LIMIT;
    if !within {
        return Err(SuspensionError::SolveFailed { residual: res.amax(), iterations });
    }
    Ok(pose)
}
