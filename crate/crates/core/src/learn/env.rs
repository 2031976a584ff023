use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::obs::{ObsMode, Observation, ObservationBuilder};
use super::reward::{compute_reward, RewardConfig, StepContext, Terminal};
use crate::scenario::TargetSite;
use crate::terrain::{generate_terrain, TerrainSpec};
use crate::vehicle::{ObjectKind, RoverConfig};
use crate::world::{DriveLimits, World};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("step called before reset")]
    StepBeforeReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Running,
    Success,
    Fail,
    Timeout,
}

impl Outcome {
    pub fn is_done(self) -> bool {
        self != Outcome::Running
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: [f64; 2],
    pub reward: f64,
    pub outcome: Outcome,
    pub distance: f64,
}

/// Privileged state for scripted controllers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Truth {
    pub distance: f64,
    /// Signed, positive when the target is to the left.
    pub bearing: f64,
}

/// Anything PPO can be trained on.
pub trait Env: Send {
    fn obs_mode(&self) -> ObsMode;
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: [f64; 2]) -> Result<Transition, EnvError>;
    fn truth(&self) -> Truth;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub mode: ObsMode,
    pub reward: RewardConfig,
    pub limits: DriveLimits,
    /// Control steps before an episode is cut off.
    pub max_steps: usize,
    pub spawn_distance: [f64; 2],
    /// Bound on the initial heading error, below the failure angle.
    pub spawn_max_angle: f64,
    pub terrain: TerrainSpec,
    pub terrain_seed: u64,
    pub target: ObjectKind,
    pub rover: RoverConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            mode: ObsMode::Features,
            reward: RewardConfig::default(),
            limits: DriveLimits::default(),
            max_steps: 2000,
            spawn_distance: [6.0, 25.0],
            spawn_max_angle: 25f64.to_radians(),
            terrain: TerrainSpec { size_x: 64.0, size_y: 64.0, ..TerrainSpec::default() },
            terrain_seed: 0,
            target: ObjectKind::Rock,
            rover: RoverConfig::default(),
        }
    }
}

/// Drive-to-target episodes: the target sits at the origin and the rover
/// spawns on a seeded ring around it, roughly facing it.
pub struct DriveEnv {
    pub cfg: EnvConfig,
    pub world: World,
    builder: ObservationBuilder,
    prev_action: [f64; 2],
    d_prev: f64,
    steps: usize,
    ready: bool,
}

impl DriveEnv {
    pub fn new(cfg: EnvConfig) -> Self {
        let terrain = generate_terrain(&cfg.terrain, cfg.terrain_seed).expect("valid training terrain");
        let targets = vec![TargetSite { kind: cfg.target, position: [0.0, 0.0] }];
        let mut world = World::new(terrain, cfg.rover.clone(), targets, [cfg.spawn_distance[0], 0.0], std::f64::consts::PI, 0);
        world.limits = cfg.limits;
        DriveEnv { builder: ObservationBuilder::new(cfg.mode), cfg, world, prev_action: [0.0; 2], d_prev: 0.0, steps: 0, ready: false }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn distance_and_theta(&self) -> (f64, f64) {
        let (d, b) = self.world.range_and_bearing(self.cfg.target).expect("target present");
        (d, b.abs())
    }
}

impl Env for DriveEnv {
    fn obs_mode(&self) -> ObsMode {
        self.cfg.mode
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [lo, hi] = self.cfg.spawn_distance;
        let d = rng.gen_range(lo..hi);
        let around = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let err = rng.gen_range(-self.cfg.spawn_max_angle..self.cfg.spawn_max_angle);
        let pos = [d * around.cos(), d * around.sin()];
        self.world.respawn(pos, crate::wrap_angle(around + std::f64::consts::PI + err));
        self.world.state.time = 0.0;
        self.prev_action = [0.0; 2];
        self.steps = 0;
        self.ready = true;
        self.d_prev = self.distance_and_theta().0;
        self.builder.reset();
        self.builder.observe(&self.world, self.cfg.target, self.prev_action)
    }

    fn step(&mut self, action: [f64; 2]) -> Result<Transition, EnvError> {
        if !self.ready {
            return Err(EnvError::StepBeforeReset);
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        self.world.apply_action(a);
        self.steps += 1;
        let (d, theta) = self.distance_and_theta();
        let outcome = if d <= self.cfg.reward.success_radius && self.world.is_stopped() {
            Outcome::Success
        } else if theta > self.cfg.reward.fail_angle || self.world.state.off_terrain {
            Outcome::Fail
        } else if self.steps >= self.cfg.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        let terminal = match outcome {
            Outcome::Success => Terminal::Success,
            Outcome::Fail => Terminal::Fail,
            _ => Terminal::None,
        };
        let ctx = StepContext { d_prev: self.d_prev, d_curr: d, theta, action: a, prev_action: self.prev_action };
        let reward = compute_reward(&ctx, &self.cfg.reward, terminal);
        self.prev_action = a;
        self.d_prev = d;
        if outcome.is_done() {
            self.ready = false;
        }
        let obs = self.builder.observe(&self.world, self.cfg.target, self.prev_action);
        Ok(Transition { obs, action: a, reward, outcome, distance: d })
    }

    fn truth(&self) -> Truth {
        let (distance, bearing) = self.world.range_and_bearing(self.cfg.target).expect("target present");
        Truth { distance, bearing }
    }
}
