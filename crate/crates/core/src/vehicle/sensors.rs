use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RoverState;

/// Standard deviation per channel; zero disables noise on that channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorNoise {
    pub wheel_angle: f64,
    pub velocity: f64,
    pub position: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensors {
    pub wheel_angles: [f64; 4],
    pub forward_velocity: f64,
    /// `(x, y, heading)`.
    pub pose_odometry: [f64; 3],
}

fn noisy<R: Rng + ?Sized>(value: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        value + Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        value
    }
}

/// Ground truth plus additive Gaussian noise. Channels with zero sigma draw
/// nothing from `rng`.
pub fn read_sensors<R: Rng + ?Sized>(state: &RoverState, noise: &SensorNoise, rng: &mut R) -> Sensors {
    let mut wheel_angles = state.steer_angles;
    for a in wheel_angles.iter_mut() {
        *a = noisy(*a, noise.wheel_angle, rng);
    }
    Sensors {
        wheel_angles,
        forward_velocity: noisy(state.body_velocity[0], noise.velocity, rng),
        pose_odometry: [
            noisy(state.position[0], noise.position, rng),
            noisy(state.position[1], noise.position, rng),
            noisy(state.heading, noise.heading, rng),
        ],
    }
}
