//! Headless scenario execution.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lunarsim::autonomy::{
    mentioned_targets, ChatClient, OrchestratorError, ScriptedOperator, ScriptedOracle, Session, SessionConfig, VlmTransport,
};
use lunarsim::coordination::{run_excavation, write_cycles_csv, CoordinationError, Site};
use lunarsim::learn::{mix_seed, ActorCritic, GaussianPolicy, Policy, PursuitPolicy};
use lunarsim::scenario::{Mode, Scenario, ScenarioError};
use lunarsim::terrain::generate_terrain;
use lunarsim::world::World;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::record::{Header, MachineSnapshot, Recorder, RoverSnapshot, Row, CODE_VERSION, RECORD_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VlmChoice {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    /// Overrides the scenario's VLM choice.
    pub vlm: Option<VlmChoice>,
    pub record: Option<PathBuf>,
    /// Trained Drive policy; the pursuit controller is used without one.
    pub policy: Option<PathBuf>,
    /// Cycle table for excavation runs.
    pub csv: Option<PathBuf>,
    /// Attach camera frames to VLM messages.
    pub images: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("policy checkpoint {path}: {message}")]
    Policy { path: String, message: String },
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
}

impl RunError {
    /// Process exit code: 2 for unusable inputs, 1 for failures during a run.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Scenario(_) | RunError::Policy { .. } => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub scenario_hash: String,
    /// Every requested task (targets or cycles) was completed.
    pub completed: bool,
    pub finishes: usize,
    pub violations: usize,
    pub skill_calls: usize,
    pub sim_time: f64,
    pub metrics: BTreeMap<String, f64>,
    pub record: Option<PathBuf>,
}

/// The inputs a record's hash covers.
#[derive(Debug, Clone, Serialize)]
struct HashedConfig<'a> {
    seed: u64,
    vlm: VlmChoice,
    images: bool,
    policy: Option<&'a str>,
}

/// SHA-256 over the resolved model tree and the run configuration.
pub fn scenario_hash(scenario: &Scenario, config: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(scenario.tree.to_json().as_bytes());
    h.update(b"\n");
    h.update(config.to_string().as_bytes());
    hex::encode(h.finalize())
}

pub fn load_policy(path: Option<&Path>) -> Result<(Box<dyn Policy>, Option<String>), RunError> {
    let Some(path) = path else { return Ok((Box::new(PursuitPolicy::default()), None)) };
    let bytes = std::fs::read(path).map_err(|e| RunError::Policy { path: path.display().to_string(), message: e.to_string() })?;
    let (model, _) =
        ActorCritic::load(path).map_err(|e| RunError::Policy { path: path.display().to_string(), message: e.to_string() })?;
    Ok((Box::new(GaussianPolicy::new(model)), Some(hex::encode(Sha256::digest(&bytes)))))
}

pub fn transport(choice: VlmChoice) -> Result<Box<dyn VlmTransport>, RunError> {
    match choice {
        VlmChoice::Scripted => Ok(Box::new(ScriptedOracle::default())),
        VlmChoice::Remote => ChatClient::from_env()
            .map(|c| Box::new(c) as Box<dyn VlmTransport>)
            .map_err(|e| RunError::Scenario(ScenarioError::Invalid(e.to_string()))),
    }
}

pub fn vlm_choice(scenario: &Scenario, over: Option<VlmChoice>) -> Result<VlmChoice, RunError> {
    if let Some(v) = over {
        return Ok(v);
    }
    match scenario.vlm.as_str() {
        "scripted" => Ok(VlmChoice::Scripted),
        "remote" => Ok(VlmChoice::Remote),
        other => Err(ScenarioError::Invalid(format!("unknown vlm `{other}`")).into()),
    }
}

/// The rover world a navigation scenario describes, with the spawn pose
/// drawn from the seed when the scenario randomises it.
pub fn rover_world(scenario: &Scenario) -> Result<World, RunError> {
    let terrain = generate_terrain(&scenario.terrain_spec()?, scenario.seed).map_err(ScenarioError::from)?;
    let (mut spawn, mut heading) = (scenario.spawn_position, scenario.spawn_heading);
    if scenario.randomize_spawn {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scenario.seed, 0x5BA7));
        spawn = [spawn[0] + rng.gen_range(-5.0..5.0), spawn[1] + rng.gen_range(-5.0..5.0)];
        heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    let mut world = World::new(terrain, scenario.rover_config()?, scenario.targets()?, spawn, heading, scenario.seed);
    world.sun = scenario.sun();
    if world.state.off_terrain {
        return Err(ScenarioError::Invalid(format!("spawn ({:.1}, {:.1}) is outside the terrain", spawn[0], spawn[1])).into());
    }
    Ok(world)
}

pub fn session_config(scenario: &Scenario, images: bool) -> SessionConfig {
    let mut cfg = SessionConfig { attach_images: images, ..SessionConfig::default() };
    cfg.drive.duration = scenario.drive_duration;
    cfg
}

/// Loads and runs one scenario to completion.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let scenario = Scenario::load(path, opts.seed)?;
    run_loaded(&scenario, opts)
}

pub fn run_loaded(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let vlm = vlm_choice(scenario, opts.vlm)?;
    let (policy, policy_hash) = match scenario.mode {
        Mode::RoverNav => load_policy(opts.policy.as_deref())?,
        Mode::Excavation => (Box::new(PursuitPolicy::default()) as Box<dyn Policy>, None),
    };
    let config = serde_json::to_value(HashedConfig { seed: scenario.seed, vlm, images: opts.images, policy: policy_hash.as_deref() })
        .expect("config serialises");
    let name = scenario.path.as_ref().and_then(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let header = Header {
        format: RECORD_FORMAT.into(),
        version: CODE_VERSION.into(),
        scenario: name.clone(),
        scenario_hash: scenario_hash(scenario, &config),
        seed: scenario.seed,
        config,
    };
    let recorder = match &opts.record {
        Some(p) => Some(Recorder::new(BufWriter::new(File::create(p).map_err(io_err(p))?), &header).map_err(io_err(p))?),
        None => None,
    };
    let recorder = Arc::new(Mutex::new(recorder));
    let write = {
        let recorder = recorder.clone();
        move |row: Row| {
            if let Some(r) = recorder.lock().expect("recorder lock").as_mut() {
                if let Err(e) = r.row(&row) {
                    log::error!("record write failed: {e}");
                }
            }
        }
    };
    let mut summary = RunSummary {
        scenario: name,
        mode: scenario.mode,
        seed: scenario.seed,
        scenario_hash: header.scenario_hash.clone(),
        completed: false,
        finishes: 0,
        violations: 0,
        skill_calls: 0,
        sim_time: 0.0,
        metrics: BTreeMap::new(),
        record: opts.record.clone(),
    };
    match scenario.mode {
        Mode::RoverNav => {
            let task = scenario.task.clone().ok_or_else(|| ScenarioError::Missing("task".into()))?;
            let world = rover_world(scenario)?;
            let sink = {
                let write = write.clone();
                Box::new(move |e: &lunarsim::autonomy::SessionEvent| write(Row::Event { event: e.clone() }))
            };
            let mut session = Session::new(world, transport(vlm)?, policy, session_config(scenario, opts.images)).with_event_sink(sink);
            let mut op = ScriptedOperator::new(task.clone());
            let mut tick = |w: &World| write(Row::Rover(RoverSnapshot::of(w)));
            let s = session.run(&mut op, scenario.duration, &mut tick)?;
            let wanted = mentioned_targets(&task);
            summary.completed = s.violations == 0 && wanted.iter().all(|t| s.finished_targets.contains(&Some(*t)));
            summary.finishes = s.finishes;
            summary.violations = s.violations;
            summary.skill_calls = s.skill_calls;
            summary.sim_time = s.sim_time;
            summary.metrics.insert("finishes".into(), s.finishes as f64);
            summary.metrics.insert("skill_calls".into(), s.skill_calls as f64);
            summary.metrics.insert("sim_time_s".into(), s.sim_time);
        }
        Mode::Excavation => {
            let mut site = Site::from_scenario(scenario)?;
            let n = scenario.number("cycles").unwrap_or(30.0) as usize;
            let mut last_second = -1i64;
            let mut seen = 0;
            let mut tick = |s: &Site| {
                for c in &s.cycles[seen..] {
                    write(Row::Cycle(c.clone()));
                }
                seen = s.cycles.len();
                let second = s.time.floor() as i64;
                if second != last_second {
                    last_second = second;
                    write(Row::Machines(MachineSnapshot::of(s)));
                }
            };
            let report = run_excavation(&mut site, n, scenario.duration, &mut tick)?;
            for c in &report.cycles[seen.min(report.cycles.len())..] {
                write(Row::Cycle(c.clone()));
            }
            if let Some(p) = &opts.csv {
                let f = File::create(p).map_err(io_err(p))?;
                write_cycles_csv(&report.cycles, f).map_err(|e| RunError::Io { path: p.display().to_string(), message: e.to_string() })?;
            }
            summary.completed = report.cycles.len() == n;
            summary.sim_time = report.sim_time;
            summary.metrics.insert("cycles".into(), report.cycles.len() as f64);
            summary.metrics.insert("mean_work_per_cycle_J".into(), report.mean_work_per_cycle());
            summary.metrics.insert("grade_deviation_m".into(), report.grade_deviation);
            summary.metrics.insert("mass_relative_error".into(), report.balance.relative_error());
            summary.metrics.insert("dumped_kg".into(), report.balance.dumped);
            summary.metrics.insert("total_energy_J".into(), report.energy.total());
        }
    }
    // The output path is not part of the trajectory.
    let body = RunSummary { record: None, ..summary.clone() };
    write(Row::Summary { summary: serde_json::to_value(&body).expect("summary serialises") });
    let recorder = recorder.lock().expect("recorder lock").take();
    if let (Some(r), Some(p)) = (recorder, &opts.record) {
        r.finish().map_err(io_err(p))?;
    }
    Ok(summary)
}
