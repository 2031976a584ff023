//! Lunar rover and construction-machine simulation: terrain, vehicle
//! kinematics, low-level control, the skill-based autonomy stack, PPO
//! training and behaviour-tree coordination.

pub mod autonomy;
pub mod control;
pub mod coordination;
pub mod learn;
pub mod par;
pub mod scenario;
pub mod terrain;
pub mod vehicle;
pub mod world;

/// Lunar surface gravity, m/s².
pub const LUNAR_GRAVITY: f64 = 1.62;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}
