//! Scenario files: a `.plx` model whose top-level fields configure a run and
//! whose instances place terrain, craters, targets and machines.

use std::path::{Path, PathBuf};

use scenelang::{ModelTree, PlxError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::{CraterSpec, RegolithParams, SunConfig, TerrainError, TerrainSpec};
use crate::vehicle::{ObjectKind, RoverConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] PlxError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("scenario field `{0}` is missing or has the wrong type")]
    Missing(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RoverNav,
    Excavation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSite {
    pub kind: ObjectKind,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub path: Option<PathBuf>,
    pub tree: ModelTree,
    pub mode: Mode,
    pub seed: u64,
    pub duration: f64,
    pub vlm: String,
    pub task: Option<String>,
    pub drive_duration: f64,
    pub randomize_spawn: bool,
    pub spawn_position: [f64; 2],
    pub spawn_heading: f64,
}

impl Scenario {
    /// Loads and assembles a scenario file. `seed` overrides the file's seed.
    pub fn load(path: impl AsRef<Path>, seed: Option<u64>) -> Result<Self, ScenarioError> {
        let forest = scenelang::load_file(path.as_ref())?;
        let probe = scenelang::build(&forest, None, 0)?;
        let seed = seed.unwrap_or_else(|| probe.number("seed").unwrap_or(0.0) as u64);
        let tree = scenelang::build(&forest, None, seed)?;
        let mut s = Scenario::from_tree(tree, seed)?;
        s.path = Some(path.as_ref().to_path_buf());
        Ok(s)
    }

    pub fn from_tree(tree: ModelTree, seed: u64) -> Result<Self, ScenarioError> {
        let mode = match tree.string("mode") {
            Some("rover_nav") => Mode::RoverNav,
            Some("excavation") => Mode::Excavation,
            Some(other) => return Err(ScenarioError::Invalid(format!("unknown mode `{other}`"))),
            None => return Err(ScenarioError::Missing("mode".into())),
        };
        let spawn = tree.vec3("spawn_position").unwrap_or([0.0; 3]);
        let s = Scenario {
            path: None,
            mode,
            seed,
            duration: tree.number("duration").ok_or_else(|| ScenarioError::Missing("duration".into()))?,
            vlm: tree.string("vlm").unwrap_or("scripted").to_string(),
            task: tree.string("task").map(str::to_string),
            drive_duration: tree.number("drive_duration").unwrap_or(20.0),
            randomize_spawn: tree.boolean("randomize_spawn").unwrap_or(false),
            spawn_position: [spawn[0], spawn[1]],
            spawn_heading: tree.number("spawn_heading").unwrap_or(0.0),
            tree,
        };
        if !(s.duration > 0.0) {
            return Err(ScenarioError::Invalid("duration must be positive".into()));
        }
        Ok(s)
    }

    fn instance(&self, model: &str) -> Result<String, ScenarioError> {
        self.tree.instances_of(model).into_iter().next().ok_or_else(|| ScenarioError::Missing(model.into()))
    }

    pub fn terrain_spec(&self) -> Result<TerrainSpec, ScenarioError> {
        let p = self.instance("LunarTerrain")?;
        let t = &self.tree;
        let n = |f: &str| t.number(&format!("{p}.{f}")).ok_or_else(|| ScenarioError::Missing(format!("{p}.{f}")));
        let craters = t
            .instances_of("Crater")
            .into_iter()
            .map(|c| {
                let center = t.vec3(&format!("{c}.center")).ok_or_else(|| ScenarioError::Missing(format!("{c}.center")))?;
                Ok(CraterSpec {
                    center: [center[0], center[1]],
                    radius: t.number(&format!("{c}.radius")).ok_or_else(|| ScenarioError::Missing(format!("{c}.radius")))?,
                    depth: t.number(&format!("{c}.depth")).ok_or_else(|| ScenarioError::Missing(format!("{c}.depth")))?,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(TerrainSpec {
            size_x: n("size_x")?,
            size_y: n("size_y")?,
            cell_size: n("cell_size")?,
            craters,
            noise_amplitude: n("noise_amplitude")?,
            slope: n("slope")?,
            regolith: RegolithParams {
                internal_friction: n("internal_friction")?,
                cohesion: n("cohesion")?,
                dilatancy: n("dilatancy")?,
                mass_density: n("mass_density")?,
                compression_index: n("compression_index")?,
            },
        })
    }

    pub fn sun(&self) -> SunConfig {
        match self.tree.instances_of("Sun").first() {
            Some(p) => SunConfig {
                azimuth: self.tree.number(&format!("{p}.azimuth")).unwrap_or(SunConfig::default().azimuth),
                elevation: self.tree.number(&format!("{p}.elevation")).unwrap_or(SunConfig::default().elevation),
            },
            None => SunConfig::default(),
        }
    }

    pub fn targets(&self) -> Result<Vec<TargetSite>, ScenarioError> {
        self.tree
            .instances_of("Target")
            .into_iter()
            .map(|p| {
                let kind = self.tree.string(&format!("{p}.kind")).unwrap_or("");
                let kind = ObjectKind::from_name(kind).ok_or_else(|| ScenarioError::Invalid(format!("{p}: unknown target kind `{kind}`")))?;
                let pos = self.tree.vec3(&format!("{p}.position")).ok_or_else(|| ScenarioError::Missing(format!("{p}.position")))?;
                Ok(TargetSite { kind, position: [pos[0], pos[1]] })
            })
            .collect()
    }

    pub fn rover_config(&self) -> Result<RoverConfig, ScenarioError> {
        let p = self.instance("Rover")?;
        RoverConfig::from_tree(&self.tree, &p).ok_or_else(|| ScenarioError::Missing(format!("{p} geometry")))
    }

    /// A numeric top-level field.
    pub fn number(&self, field: &str) -> Result<f64, ScenarioError> {
        self.tree.number(field).ok_or_else(|| ScenarioError::Missing(field.into()))
    }

    pub fn point(&self, field: &str) -> Result<[f64; 2], ScenarioError> {
        let v = self.tree.vec3(field).ok_or_else(|| ScenarioError::Missing(field.into()))?;
        Ok([v[0], v[1]])
    }
}
