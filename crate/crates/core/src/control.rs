//! Low-level motion control: Ackermann and pivot wheel targets, and PD
//! tracking of per-wheel targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{RoverConfig, CORNER_WHEELS, MIDDLE_WHEELS};

/// Default maximum curvature magnitude, 1/m.
pub const KAPPA_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("curvature {curvature} needs steer {steer:.4} rad beyond the {limit:.4} rad limit")]
    CurvatureTooTight { curvature: f64, steer: f64, limit: f64 },
}

/// Body-level drive command. Positive curvature turns left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AckermannCommand {
    pub curvature: f64,
    pub speed: f64,
}

/// Steer angles for FL, FR, RL, RR and wheel speeds (rad/s) for
/// FL, FR, ML, MR, RL, RR.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelTargets {
    pub steer: [f64; 4],
    pub speed: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub kp: f64,
    pub kd: f64,
}

/// Steer gains act on angle error (kp in 1/s). Speed gains are dimensionless
/// multipliers on the first-order tracking law `dω/dt = kp·(ω* − ω)/τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub steer: Gain,
    pub speed: Gain,
    pub speed_tau: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        PdGains { steer: Gain { kp: 5.0, kd: 0.5 }, speed: Gain { kp: 1.0, kd: 0.0 }, speed_tau: 0.2 }
    }
}

/// Wraps an angle into (−π/2, π/2]; the flag reports whether the direction
/// was reversed.
pub fn wrap_half(angle: f64) -> (f64, bool) {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut a = angle;
    let mut flipped = false;
    while a > FRAC_PI_2 {
        a -= PI;
        flipped = !flipped;
    }
    while a <= -FRAC_PI_2 {
        a += PI;
        flipped = !flipped;
    }
    (a, flipped)
}

/// Wheel targets that put the turning centre at `(0, 1/curvature)`.
pub fn ackermann_solve(cmd: AckermannCommand, cfg: &RoverConfig) -> Result<WheelTargets, ControlError> {
    let r = cfg.wheel_radius;
    let mut t = WheelTargets::default();
    if cmd.curvature == 0.0 {
        t.speed = [cmd.speed / r; 6];
        return Ok(t);
    }
    let radius = 1.0 / cmd.curvature;
    let yaw_rate = cmd.speed * cmd.curvature;
    for (k, &w) in CORNER_WHEELS.iter().enumerate() {
        let [x, y] = cfg.wheel_positions()[w];
        let (steer, _) = wrap_half(x.atan2(radius - y));
        if steer.abs() > cfg.max_steer_angle + 1e-12 {
            return Err(ControlError::CurvatureTooTight { curvature: cmd.curvature, steer, limit: cfg.max_steer_angle });
        }
        t.steer[k] = steer;
        t.speed[w] = yaw_rate * ((radius - y) * steer.cos() + x * steer.sin()) / r;
    }
    for &w in &MIDDLE_WHEELS {
        let [_, y] = cfg.wheel_positions()[w];
        t.speed[w] = yaw_rate * (radius - y) / r;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PivotDirection {
    Ccw,
    Cw,
}

impl PivotDirection {
    pub fn sign(self) -> f64 {
        match self {
            PivotDirection::Ccw => 1.0,
            PivotDirection::Cw => -1.0,
        }
    }
}

/// Wheel targets for turning in place about the body origin at `rate` rad/s.
pub fn pivot_solve(direction: PivotDirection, rate: f64, cfg: &RoverConfig) -> WheelTargets {
    let omega = direction.sign() * rate.abs();
    let r = cfg.wheel_radius;
    let mut t = WheelTargets::default();
    for (k, &w) in CORNER_WHEELS.iter().enumerate() {
        let [x, y] = cfg.wheel_positions()[w];
        let (steer, flipped) = wrap_half(x.atan2(-y));
        let dist = x.hypot(y);
        t.steer[k] = steer;
        t.speed[w] = if flipped { -1.0 } else { 1.0 } * omega * dist / r;
    }
    for &w in &MIDDLE_WHEELS {
        let [_, y] = cfg.wheel_positions()[w];
        // Velocity ω·(−y, x) projected on the unsteered wheel direction (1, 0).
        t.speed[w] = -omega * y / r;
    }
    t
}

/// Per-channel controller memory. `None` until the first update so the
/// derivative term has no kick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PdState {
    pub prev_error: Option<[f64; 4]>,
}

/// Actuator rates produced by [`pd_update`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActuatorRates {
    pub steer_rate: [f64; 4],
    pub wheel_accel: [f64; 6],
}

/// One PD step. Steer rates are clamped to `max_steer_rate`.
pub fn pd_update(
    steer: &[f64; 4],
    wheel_speed: &[f64; 6],
    target: &WheelTargets,
    gains: &PdGains,
    memory: &mut PdState,
    max_steer_rate: f64,
    dt: f64,
) -> ActuatorRates {
    let mut out = ActuatorRates::default();
    let mut err = [0.0; 4];
    for k in 0..4 {
        err[k] = target.steer[k] - steer[k];
    }
    let prev = memory.prev_error.unwrap_or(err);
    for k in 0..4 {
        let rate = gains.steer.kp * err[k] + gains.steer.kd * (err[k] - prev[k]) / dt;
        out.steer_rate[k] = rate.clamp(-max_steer_rate, max_steer_rate);
    }
    memory.prev_error = Some(err);
    for w in 0..6 {
        out.wheel_accel[w] = gains.speed.kp * (target.speed[w] - wheel_speed[w]) / gains.speed_tau;
    }
    out
}
