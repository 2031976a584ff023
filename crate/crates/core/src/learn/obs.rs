use serde::{Deserialize, Serialize};

use crate::vehicle::{CameraConfig, Channels, ObjectKind};
use crate::world::World;

/// Distance normalisation used in feature mode, m.
pub const FEATURE_DISTANCE_SCALE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObsMode {
    /// Target distance and bearing replace the image.
    Features,
    Image { width: usize, height: usize, channels: Channels },
}

impl ObsMode {
    pub fn full_image() -> Self {
        ObsMode::Image { width: 128, height: 128, channels: Channels::Rgb }
    }

    pub fn desk_image() -> Self {
        ObsMode::Image { width: 64, height: 64, channels: Channels::Gray }
    }

    /// Length of one non-visual frame.
    pub fn frame_len(&self) -> usize {
        match self {
            ObsMode::Features => 3 + 4 + 1 + 2,
            ObsMode::Image { .. } => 4 + 1 + 2,
        }
    }

    pub fn vector_len(&self) -> usize {
        2 * self.frame_len()
    }

    /// `(channels, height, width)` of the image input.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        match *self {
            ObsMode::Features => None,
            ObsMode::Image { width, height, channels } => {
                Some((if channels == Channels::Rgb { 3 } else { 1 }, height, width))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Channel-major image in `[0, 1]`.
    pub image: Option<Vec<f64>>,
    /// Current non-visual frame followed by the previous one.
    pub vector: Vec<f64>,
}

/// Builds stacked observations; the first frame after a reset is duplicated.
#[derive(Debug, Clone)]
pub struct ObservationBuilder {
    pub mode: ObsMode,
    previous: Option<Vec<f64>>,
}

impl ObservationBuilder {
    pub fn new(mode: ObsMode) -> Self {
        ObservationBuilder { mode, previous: None }
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    fn frame(&self, world: &World, target: ObjectKind, prev_action: [f64; 2]) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.mode.frame_len());
        if self.mode == ObsMode::Features {
            let (d, bearing) = world.range_and_bearing(target).unwrap_or((0.0, 0.0));
            f.extend([d / FEATURE_DISTANCE_SCALE, bearing.sin(), bearing.cos()]);
        }
        f.extend(world.state.steer_angles);
        f.push(world.state.body_velocity[0]);
        f.extend(prev_action);
        f
    }

    fn image(&self, world: &World) -> Option<Vec<f64>> {
        let ObsMode::Image { width, height, channels } = self.mode else { return None };
        let img = world.camera_with(CameraConfig { width, height, channels, ..world.rover.camera });
        let c = img.channels;
        // Interleaved to channel-major.
        let mut out = vec![0.0; img.data.len()];
        for (k, &b) in img.data.iter().enumerate() {
            let (pixel, ch) = (k / c, k % c);
            out[ch * width * height + pixel] = b as f64 / 255.0;
        }
        Some(out)
    }

    pub fn observe(&mut self, world: &World, target: ObjectKind, prev_action: [f64; 2]) -> Observation {
        let current = self.frame(world, target, prev_action);
        let previous = self.previous.replace(current.clone()).unwrap_or_else(|| current.clone());
        let mut vector = current;
        vector.extend(previous);
        Observation { image: self.image(world), vector }
    }
}
