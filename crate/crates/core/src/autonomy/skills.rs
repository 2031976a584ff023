use serde::{Deserialize, Serialize};

use super::{SkillResult, Target};
use crate::control::{pivot_solve, PivotDirection, WheelTargets};
use crate::learn::{ObsMode, ObservationBuilder, Policy, Truth};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Simulated seconds before the skill gives up.
    pub duration: f64,
    pub success_radius: f64,
    pub obs_mode: ObsMode,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig { duration: 20.0, success_radius: 4.0, obs_mode: ObsMode::Features }
    }
}

/// Runs the drive policy at control rate until the rover rests within the
/// success radius, the policy gives up, the rover leaves the map or time
/// runs out. `tick` sees the world after every control step.
pub fn drive_skill(
    world: &mut World,
    target: Target,
    cfg: &DriveConfig,
    policy: &mut dyn Policy,
    tick: &mut dyn FnMut(&World),
) -> SkillResult {
    let Some(_) = world.site(target) else {
        return SkillResult::fail(format!("no {} in the scene", target.name()));
    };
    let truth = |w: &World| {
        let (distance, bearing) = w.range_and_bearing(target).expect("target present");
        Truth { distance, bearing }
    };
    let reached = |w: &World| truth(w).distance <= cfg.success_radius && w.is_stopped();
    if reached(world) {
        return SkillResult::success("already at the target");
    }
    policy.reset();
    let mut builder = ObservationBuilder::new(cfg.obs_mode);
    let mut prev = [0.0; 2];
    let steps = (cfg.duration / world.limits.control_dt(world.dt)).round() as usize;
    for _ in 0..steps {
        let t = truth(world);
        if policy.gives_up(&t) {
            return SkillResult::fail(format!("policy gave up at {:.1} m", t.distance));
        }
        let obs = builder.observe(world, target, prev);
        let a = policy.act(&obs, &t);
        let a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        world.apply_action(a);
        prev = a;
        tick(world);
        if world.state.off_terrain {
            return SkillResult::fail("left the terrain");
        }
        if reached(world) {
            return SkillResult::success(format!("stopped {:.2} m from the {}", truth(world).distance, target.name()));
        }
    }
    SkillResult::fail(format!("timed out {:.1} m from the {}", truth(world).distance, target.name()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotateConfig {
    pub angle: f64,
    /// Commanded yaw rate, rad/s.
    pub rate: f64,
    /// Minimum realised heading change that counts as success.
    pub min_angle: f64,
    /// Steering error below which the wheels count as aligned.
    pub align_tolerance: f64,
}

impl Default for RotateConfig {
    fn default() -> Self {
        RotateConfig { angle: 60f64.to_radians(), rate: 0.5, min_angle: 50f64.to_radians(), align_tolerance: 1e-3 }
    }
}

/// One counter-clockwise pivot of `cfg.angle`. The wheels are first
/// steered into the pivot pose at rest, then driven until the heading
/// change plus the predicted coast-down reaches the goal, then braked to a
/// stop. Success iff the realised change reaches `cfg.min_angle`.
pub fn rotate_skill(world: &mut World, cfg: &RotateConfig, tick: &mut dyn FnMut(&World)) -> SkillResult {
    let spin = pivot_solve(PivotDirection::Ccw, cfg.rate, &world.rover);
    let hold = WheelTargets { steer: spin.steer, speed: [0.0; 6] };
    let gains = world.rover.gains;
    // Wheel speeds decay as exp(−t·kp/τ) once the target drops to zero.
    let tau = gains.speed_tau / gains.speed.kp;
    let dt = world.dt;
    let align_limit = (2.0 * world.rover.max_steer_angle / world.rover.max_steer_rate + 2.0) / dt;
    let mut n = 0usize;
    while (0..4).any(|k| (world.state.steer_angles[k] - hold.steer[k]).abs() > cfg.align_tolerance) && (n as f64) < align_limit {
        world.step(&hold);
        n += 1;
        tick(world);
    }

    let mut turned = 0.0;
    let mut last = world.state.heading;
    let advance = |w: &World, turned: &mut f64, last: &mut f64| {
        *turned += crate::wrap_angle(w.state.heading - *last);
        *last = w.state.heading;
    };
    let spin_limit = (2.0 * cfg.angle / cfg.rate) / dt;
    n = 0;
    while turned + world.state.yaw_rate * tau < cfg.angle && (n as f64) < spin_limit {
        world.step(&spin);
        advance(world, &mut turned, &mut last);
        n += 1;
        tick(world);
    }
    let settle_limit = (10.0 * tau) / dt;
    n = 0;
    while world.state.wheel_speeds.iter().any(|w| w.abs() > 1e-3) && (n as f64) < settle_limit {
        world.step(&hold);
        advance(world, &mut turned, &mut last);
        n += 1;
        tick(world);
    }
    let deg = turned.to_degrees();
    if world.state.off_terrain {
        SkillResult::fail("left the terrain")
    } else if turned >= cfg.min_angle {
        SkillResult::success(format!("rotated {deg:.1}°"))
    } else {
        SkillResult::fail(format!("stuck after {deg:.1}°"))
    }
}
