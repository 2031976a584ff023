//! The resolved model tree and its JSON form.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::ast::{Forest, MateKind, SignalDirection};

/// Format tag written into every serialized tree.
pub const MODEL_TREE_FORMAT: &str = "plx-modeltree/1";

/// A concrete parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Str(String),
    Vec3([f64; 3]),
    Quat([f64; 4]),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "Bool",
            Value::Number(_) => "Real",
            Value::Str(_) => "String",
            Value::Vec3(_) => "Vec3",
            Value::Quat(_) => "Quat",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }
}

/// A frame rigidly attached to a body: position in metres and a unit
/// quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Default for Frame {
    fn default() -> Self {
        Frame { position: [0.0; 3], orientation: [1.0, 0.0, 0.0, 0.0] }
    }
}

impl Frame {
    pub fn isometry(&self) -> Isometry3<f64> {
        let [w, x, y, z] = self.orientation;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        let t = Translation3::new(self.position[0], self.position[1], self.position[2]);
        Isometry3::from_parts(t, q)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.into_inner();
        Frame { position: [t.x, t.y, t.z], orientation: [q.w, q.i, q.j, q.k] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub name: String,
    pub model: String,
    pub path: String,
    pub body: bool,
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyNode {
    pub path: String,
    pub model: String,
    pub mass: f64,
    /// True when the source gave this body a world position (an anchor).
    pub explicit: bool,
    /// World transform; `None` until assembled (anchors are set at resolve).
    pub transform: Option<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mate {
    pub name: String,
    pub kind: MateKind,
    pub body_a: String,
    pub body_b: String,
    pub frame_a: Frame,
    pub frame_b: Frame,
    pub axis: [f64; 3],
    pub actuated: bool,
    /// Initial joint coordinate (rad for hinges, m for prismatic mates).
    pub initial: f64,
    /// Joint coordinate found by assembly.
    pub coordinate: Option<f64>,
}

impl Mate {
    pub fn axis_vector(&self) -> Vector3<f64> {
        Vector3::new(self.axis[0], self.axis[1], self.axis[2])
    }

    /// Transform of frame B relative to frame A for joint coordinate `q`.
    pub fn joint_transform(&self, q: f64) -> Isometry3<f64> {
        let axis = self.axis_vector();
        match self.kind {
            MateKind::Rigid => Isometry3::identity(),
            MateKind::Hinge => Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), q),
            ),
            MateKind::Prismatic => Isometry3::from_parts(Translation3::from(axis * q), UnitQuaternion::identity()),
        }
    }

    pub fn has_coordinate(&self) -> bool {
        self.kind != MateKind::Rigid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub path: String,
    pub direction: SignalDirection,
    #[serde(rename = "type")]
    pub ty: String,
}

/// A parameter declared with `random(lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomParam {
    pub path: String,
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub total: usize,
    pub actuated: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelTree {
    pub format: String,
    pub model: String,
    pub root: TreeNode,
    pub bodies: Vec<BodyNode>,
    pub mates: Vec<Mate>,
    pub parameters: BTreeMap<String, Value>,
    pub signals: Vec<Signal>,
    pub randomized: Vec<RandomParam>,
    /// Seed used by assembly, `None` before assembly.
    pub seed: Option<u64>,
    #[serde(skip)]
    pub(crate) source: Option<Arc<Forest>>,
}

impl PartialEq for ModelTree {
    fn eq(&self, other: &Self) -> bool {
        self.format == other.format
            && self.model == other.model
            && self.root == other.root
            && self.bodies == other.bodies
            && self.mates == other.mates
            && self.parameters == other.parameters
            && self.signals == other.signals
            && self.randomized == other.randomized
            && self.seed == other.seed
    }
}

impl ModelTree {
    pub fn param(&self, path: &str) -> Option<&Value> {
        self.parameters.get(path)
    }

    pub fn number(&self, path: &str) -> Option<f64> {
        self.param(path).and_then(Value::as_f64)
    }

    pub fn string(&self, path: &str) -> Option<&str> {
        match self.param(path) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn boolean(&self, path: &str) -> Option<bool> {
        match self.param(path) {
            Some(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn vec3(&self, path: &str) -> Option<[f64; 3]> {
        match self.param(path) {
            Some(Value::Vec3(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn body(&self, path: &str) -> Option<&BodyNode> {
        self.bodies.iter().find(|b| b.path == path)
    }

    pub fn is_assembled(&self) -> bool {
        self.bodies.iter().all(|b| b.transform.is_some())
    }

    /// Paths of every instance of `model` (or a subtype named exactly so).
    pub fn instances_of(&self, model: &str) -> Vec<String> {
        fn walk(n: &TreeNode, model: &str, out: &mut Vec<String>) {
            if n.model == model {
                out.push(n.path.clone());
            }
            for c in &n.children {
                walk(c, model, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, model, &mut out);
        out
    }

    /// Deterministic JSON rendering (pretty, keys in declaration order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model tree serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
