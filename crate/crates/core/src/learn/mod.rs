//! Drive-skill learning: the reward, observation and episode contract, a
//! small actor-critic network and a PPO trainer.

mod env;
mod eval;
pub mod nn;
mod obs;
mod policy;
mod ppo;
mod reward;

pub use env::{DriveEnv, Env, EnvConfig, EnvError, Outcome, Transition, Truth};
pub use eval::{evaluate_policy, EvalReport};
pub use obs::{ObsMode, Observation, ObservationBuilder, FEATURE_DISTANCE_SCALE};
pub use policy::{entropy, log_prob, ActorCritic, Checkpoint, GaussianPolicy, Policy, PursuitPolicy, RandomPolicy, CHECKPOINT_FORMAT};
pub use ppo::{gae, mix_seed, ppo_loss, ppo_loss_grad, ppo_train, write_training_csv, IterationLog, LossTerms, PpoConfig, PpoError, Sample, TrainResult};
pub use reward::{compute_reward, RewardConfig, StepContext, Terminal};
