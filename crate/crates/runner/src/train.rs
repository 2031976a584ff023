//! Drive-skill training on a scenario's terrain.

use std::fs::File;
use std::path::{Path, PathBuf};

use lunarsim::learn::{evaluate_policy, ppo_train, write_training_csv, DriveEnv, EnvConfig, EvalReport, GaussianPolicy, IterationLog, PpoConfig};
use lunarsim::scenario::{Scenario, ScenarioError};
use serde::{Deserialize, Serialize};

use crate::run::RunError;

/// Deterministic evaluation episodes after training.
pub const EVAL_EPISODES: usize = 30;
/// Seed of the evaluation episodes, kept apart from training seeds.
pub const EVAL_SEED: u64 = 0xE7A1;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub timesteps: u64,
    pub final_mean_return: f64,
    pub evaluation: EvalReport,
}

pub fn load_config(path: Option<&Path>) -> Result<PpoConfig, RunError> {
    let Some(path) = path else { return Ok(PpoConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let cfg: PpoConfig =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Episode settings taken from the scenario's terrain and rover.
pub fn env_config(scenario: &Scenario) -> Result<EnvConfig, RunError> {
    Ok(EnvConfig {
        terrain: scenario.terrain_spec()?,
        terrain_seed: scenario.seed,
        rover: scenario.rover_config()?,
        ..EnvConfig::default()
    })
}

pub fn train(scenario_path: &Path, opts: &TrainOptions, on_iteration: impl FnMut(&IterationLog)) -> Result<TrainReport, RunError> {
    let scenario = Scenario::load(scenario_path, None)?;
    let cfg = load_config(opts.config.as_deref())?;
    let env_cfg = env_config(&scenario)?;
    let result = ppo_train(|_| DriveEnv::new(env_cfg.clone()), &cfg, opts.seed, on_iteration)
        .map_err(|e| RunError::Policy { path: opts.out.display().to_string(), message: e.to_string() })?;
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| RunError::Io { path: p.clone(), message: e.to_string() }
    };
    result.model.save(&opts.out, &cfg).map_err(io(&opts.out))?;
    if let Some(p) = &opts.curve {
        write_training_csv(&result.curve, File::create(p).map_err(io(p))?)
            .map_err(|e| RunError::Io { path: p.display().to_string(), message: e.to_string() })?;
    }
    let mut env = DriveEnv::new(env_cfg);
    let mut policy = GaussianPolicy::new(result.model);
    let evaluation = evaluate_policy(&mut env, &mut policy, EVAL_EPISODES, EVAL_SEED);
    let last = result.curve.last();
    Ok(TrainReport {
        timesteps: last.map_or(0, |l| l.timesteps),
        final_mean_return: last.map_or(f64::NAN, |l| l.mean_return),
        evaluation,
    })
}
