use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::Truth;
use super::nn::{Activation, ParamAllocator, Sequential, Trace};
use super::obs::{ObsMode, Observation};
use super::ppo::PpoConfig;

/// Maps observations to normalised actions in `[−1, 1]²`.
pub trait Policy: Send {
    fn act(&mut self, obs: &Observation, truth: &Truth) -> [f64; 2];
    fn reset(&mut self) {}
    /// Whether the policy declares the current attempt failed.
    fn gives_up(&self, _truth: &Truth) -> bool {
        false
    }
}

/// Pure-pursuit controller on privileged distance and bearing: steers onto
/// the target and brakes once inside the stopping distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuitPolicy {
    pub kappa_max: f64,
    pub stop_distance: f64,
    pub lookahead: f64,
}

impl Default for PursuitPolicy {
    fn default() -> Self {
        PursuitPolicy { kappa_max: crate::control::KAPPA_MAX, stop_distance: 3.5, lookahead: 4.0 }
    }
}

impl Policy for PursuitPolicy {
    fn act(&mut self, _obs: &Observation, t: &Truth) -> [f64; 2] {
        let l = t.distance.min(self.lookahead).max(1e-6);
        let kappa = 2.0 * t.bearing.sin() / l;
        let steer = (kappa / self.kappa_max).clamp(-1.0, 1.0);
        let speed = (t.distance - self.stop_distance).clamp(0.0, 1.0);
        [steer, speed]
    }
}

/// Uniform random actions from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation, _t: &Truth) -> [f64; 2] {
        [self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)]
    }
}

/// Actor-critic with a diagonal Gaussian head. Images go through a small
/// convolutional encoder, the vector part is passed through flat; both feed
/// separate actor and critic MLPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub mode: ObsMode,
    pub image_encoder: Option<Sequential>,
    pub actor: Sequential,
    pub critic: Sequential,
    pub log_std_offset: usize,
    /// Vector inputs are used as `(x − shift) / scale`, clipped to
    /// `±OBS_CLIP`.
    pub obs_shift: Vec<f64>,
    pub obs_scale: Vec<f64>,
    pub params: Vec<f64>,
}

pub struct Forward {
    image: Option<Trace>,
    features: Vec<f64>,
    actor: Trace,
    critic: Trace,
    pub mean: [f64; 2],
    pub log_std: [f64; 2],
    pub value: f64,
}

pub const IMAGE_FEATURES: usize = 64;
/// Normalised vector inputs are clipped to this magnitude.
pub const OBS_CLIP: f64 = 10.0;

impl ActorCritic {
    pub fn new(mode: ObsMode, hidden: usize, seed: u64) -> Self {
        let mut alloc = ParamAllocator::default();
        let image_encoder = mode.image_shape().map(|shape| {
            let c1 = alloc.conv(shape, 8, 8, 4);
            let (_, h1, w1) = conv_shape(shape, 8, 8, 4);
            let c2 = alloc.conv((8, h1, w1), 16, 4, 2);
            let flat = c2.output_len();
            let d = alloc.dense(flat, IMAGE_FEATURES, Activation::Relu);
            Sequential { layers: vec![c1, c2, d] }
        });
        let n_in = mode.vector_len() + if image_encoder.is_some() { IMAGE_FEATURES } else { 0 };
        let actor = alloc.mlp(&[n_in, hidden, hidden, 2], Activation::Tanh, Activation::Identity);
        let critic = alloc.mlp(&[n_in, hidden, hidden, 1], Activation::Tanh, Activation::Identity);
        let log_std_offset = alloc.take(2);
        let mut params = vec![0.0; alloc.next];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sqrt2 = std::f64::consts::SQRT_2;
        if let Some(enc) = &image_encoder {
            enc.init(&mut params, sqrt2, sqrt2, &mut rng);
        }
        actor.init(&mut params, sqrt2, 0.01, &mut rng);
        critic.init(&mut params, sqrt2, 1.0, &mut rng);
        let n = mode.vector_len();
        ActorCritic { mode, image_encoder, actor, critic, log_std_offset, obs_shift: vec![0.0; n], obs_scale: vec![1.0; n], params }
    }

    pub fn with_log_std(mut self, log_std: f64) -> Self {
        self.params[self.log_std_offset] = log_std;
        self.params[self.log_std_offset + 1] = log_std;
        self
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, p: &[f64], obs: &Observation) -> Forward {
        let mut features: Vec<f64> =
            obs.vector.iter().zip(&self.obs_shift).zip(&self.obs_scale).map(|((x, s), k)| ((x - s) / k).clamp(-OBS_CLIP, OBS_CLIP)).collect();
        let image = match (&self.image_encoder, &obs.image) {
            (Some(enc), Some(img)) => {
                let t = enc.forward(p, img);
                features.extend_from_slice(t.last().expect("encoder output"));
                Some(t)
            }
            (Some(_), None) => panic!("image observation required"),
            _ => None,
        };
        let actor = self.actor.forward(p, &features);
        let critic = self.critic.forward(p, &features);
        let m = actor.last().expect("actor output");
        let mean = [m[0], m[1]];
        let value = critic.last().expect("critic output")[0];
        let log_std = [p[self.log_std_offset], p[self.log_std_offset + 1]];
        Forward { image, features, actor, critic, mean, log_std, value }
    }

    /// Accumulates gradients of a scalar loss given its partial derivatives
    /// with respect to the heads.
    pub fn backward(&self, p: &[f64], f: &Forward, d_mean: [f64; 2], d_log_std: [f64; 2], d_value: f64, g: &mut [f64]) {
        let da = self.actor.backward(p, &f.actor, &d_mean, g);
        let dc = self.critic.backward(p, &f.critic, &[d_value], g);
        g[self.log_std_offset] += d_log_std[0];
        g[self.log_std_offset + 1] += d_log_std[1];
        if let (Some(enc), Some(trace)) = (&self.image_encoder, &f.image) {
            let n = self.mode.vector_len();
            let d_img: Vec<f64> = (n..f.features.len()).map(|k| da[k] + dc[k]).collect();
            enc.backward(p, trace, &d_img, g);
        }
    }

    pub fn save(&self, path: &Path, config: &PpoConfig) -> std::io::Result<()> {
        let ckpt = Checkpoint { format: CHECKPOINT_FORMAT.into(), config: config.clone(), model: self.clone() };
        std::fs::write(path, serde_json::to_string(&ckpt).map_err(std::io::Error::other)?)
    }

    pub fn load(path: &Path) -> std::io::Result<(Self, PpoConfig)> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(std::io::Error::other)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(std::io::Error::other(format!("unsupported checkpoint format `{}`", ckpt.format)));
        }
        Ok((ckpt.model, ckpt.config))
    }
}

fn conv_shape((_, h, w): (usize, usize, usize), out_c: usize, k: usize, s: usize) -> (usize, usize, usize) {
    (out_c, (h - k) / s + 1, (w - k) / s + 1)
}

pub const CHECKPOINT_FORMAT: &str = "lunarsim-policy/1";

/// Self-describing JSON checkpoint: layer shapes and activations, input
/// normalisation, the training configuration and the flat parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: PpoConfig,
    pub model: ActorCritic,
}

/// Diagonal Gaussian log density.
pub fn log_prob(mean: [f64; 2], log_std: [f64; 2], a: [f64; 2]) -> f64 {
    (0..2)
        .map(|k| {
            let z = (a[k] - mean[k]) / log_std[k].exp();
            -0.5 * z * z - log_std[k] - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

pub fn entropy(log_std: [f64; 2]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).sum()
}

/// Deterministic evaluation wrapper around a trained network: the mean
/// action, clamped to the unit box. Gives up once the heading error passes
/// the training failure angle.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub model: ActorCritic,
    pub fail_angle: f64,
}

impl GaussianPolicy {
    pub fn new(model: ActorCritic) -> Self {
        GaussianPolicy { model, fail_angle: std::f64::consts::FRAC_PI_6 }
    }
}

impl Policy for GaussianPolicy {
    fn act(&mut self, obs: &Observation, _t: &Truth) -> [f64; 2] {
        let f = self.model.forward(&self.model.params, obs);
        [f.mean[0].clamp(-1.0, 1.0), f.mean[1].clamp(-1.0, 1.0)]
    }

    fn gives_up(&self, t: &Truth) -> bool {
        t.bearing.abs() > self.fail_angle
    }
}
