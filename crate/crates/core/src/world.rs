//! A rover world: terrain, one rover and the scene targets, stepped at a
//! fixed physics rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ackermann_solve, AckermannCommand, WheelTargets, KAPPA_MAX};
use crate::scenario::TargetSite;
use crate::terrain::{ForcedSlip, Ground, Heightfield, Lossless, SunConfig};
use crate::vehicle::{
    range_and_bearing, read_sensors, render_camera, step, visibility, CameraConfig, Image, ObjectKind, RoverConfig, RoverState, SceneObject,
    SensorNoise, Sensors, DEFAULT_DT,
};

/// Mobility model applied on top of the terrain geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mobility {
    Terrain,
    Lossless,
    ForcedSlip(f64),
}

/// Drive-level limits shared by the skills and the learning environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveLimits {
    pub v_max: f64,
    pub kappa_max: f64,
    /// Physics steps per control decision.
    pub substeps: usize,
    /// Below this speed the rover counts as stopped, m/s.
    pub stop_speed: f64,
}

impl Default for DriveLimits {
    fn default() -> Self {
        DriveLimits { v_max: 1.0, kappa_max: KAPPA_MAX, substeps: 10, stop_speed: 0.05 }
    }
}

impl DriveLimits {
    /// Normalised action `(a₀, a₁)` to an Ackermann command.
    pub fn command(&self, action: [f64; 2]) -> AckermannCommand {
        let a0 = action[0].clamp(-1.0, 1.0);
        let a1 = action[1].clamp(-1.0, 1.0);
        AckermannCommand { curvature: a0 * self.kappa_max, speed: a1.max(0.0) * self.v_max }
    }

    pub fn control_dt(&self, dt: f64) -> f64 {
        dt * self.substeps as f64
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub terrain: Heightfield,
    pub rover: RoverConfig,
    pub state: RoverState,
    pub targets: Vec<TargetSite>,
    pub sun: SunConfig,
    pub dt: f64,
    pub mobility: Mobility,
    pub limits: DriveLimits,
    pub noise: SensorNoise,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(terrain: Heightfield, rover: RoverConfig, targets: Vec<TargetSite>, spawn: [f64; 2], heading: f64, seed: u64) -> Self {
        let state = RoverState::spawn(spawn[0], spawn[1], heading, &terrain, &rover);
        World {
            terrain,
            rover,
            state,
            targets,
            sun: SunConfig::default(),
            dt: DEFAULT_DT,
            mobility: Mobility::Terrain,
            limits: DriveLimits::default(),
            noise: SensorNoise::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Runs `f` with the ground view selected by the mobility model.
    pub fn with_ground<R>(&self, f: impl FnOnce(&dyn Ground) -> R) -> R {
        match self.mobility {
            Mobility::Terrain => f(&self.terrain),
            Mobility::Lossless => f(&Lossless(&self.terrain)),
            Mobility::ForcedSlip(slip) => f(&ForcedSlip { inner: &self.terrain, slip }),
        }
    }

    pub fn respawn(&mut self, spawn: [f64; 2], heading: f64) {
        self.state = RoverState::spawn(spawn[0], spawn[1], heading, &self.terrain, &self.rover);
    }

    /// One physics step towards `cmd`.
    pub fn step(&mut self, cmd: &WheelTargets) {
        let next = self.with_ground(|g| step(&self.state, cmd, g, &self.rover, self.dt));
        self.state = next;
    }

    /// One control period: the normalised action held for `substeps` physics
    /// steps.
    pub fn apply_action(&mut self, action: [f64; 2]) {
        let targets = ackermann_solve(self.limits.command(action), &self.rover).expect("curvature within the steering limit");
        for _ in 0..self.limits.substeps {
            self.step(&targets);
        }
    }

    pub fn site(&self, kind: ObjectKind) -> Option<[f64; 2]> {
        self.targets.iter().find(|t| t.kind == kind).map(|t| t.position)
    }

    /// `(distance, signed bearing)` from the rover to a target.
    pub fn range_and_bearing(&self, kind: ObjectKind) -> Option<(f64, f64)> {
        self.site(kind).map(|p| range_and_bearing(&self.state, p))
    }

    pub fn is_stopped(&self) -> bool {
        self.state.speed() < self.limits.stop_speed
    }

    pub fn objects(&self) -> Vec<SceneObject> {
        self.targets.iter().map(|t| SceneObject { kind: t.kind, position: [t.position[0], t.position[1], 0.0] }).collect()
    }

    pub fn camera(&self) -> Image {
        self.camera_with(self.rover.camera)
    }

    /// Renders with a different camera configuration.
    pub fn camera_with(&self, camera: CameraConfig) -> Image {
        let objects = self.objects();
        let rover = RoverConfig { camera, ..self.rover.clone() };
        self.with_ground(|g| render_camera(&self.state, &objects, g, &self.sun, &rover))
    }

    /// Ground-truth visibility of each target kind present in the scene.
    pub fn visible(&self, kind: ObjectKind) -> bool {
        let objects = self.objects();
        let vis = self.with_ground(|g| visibility(&self.state, &objects, g, &self.rover));
        objects.iter().zip(vis).any(|(o, v)| o.kind == kind && v)
    }

    pub fn sensors(&mut self) -> Sensors {
        read_sensors(&self.state, &self.noise, &mut self.rng)
    }
}
