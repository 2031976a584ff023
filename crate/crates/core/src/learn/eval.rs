use serde::{Deserialize, Serialize};

use super::env::{Env, Outcome};
use super::policy::Policy;
use super::ppo::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_episode_length: f64,
    pub outcomes: Vec<Outcome>,
}

/// Runs `n_episodes` seeded episodes with the policy's own (deterministic
/// or seeded) action choice.
pub fn evaluate_policy<E: Env>(env: &mut E, policy: &mut dyn Policy, n_episodes: usize, seed: u64) -> EvalReport {
    let mut outcomes = Vec::with_capacity(n_episodes);
    let (mut total_return, mut total_len) = (0.0, 0usize);
    for k in 0..n_episodes {
        policy.reset();
        let mut obs = env.reset(mix_seed(seed, k as u64));
        loop {
            let a = policy.act(&obs, &env.truth());
            let tr = env.step(a).expect("env was reset");
            total_return += tr.reward;
            total_len += 1;
            obs = tr.obs;
            if tr.outcome.is_done() {
                outcomes.push(tr.outcome);
                break;
            }
        }
    }
    let n = n_episodes.max(1) as f64;
    EvalReport {
        episodes: n_episodes,
        success_rate: outcomes.iter().filter(|o| **o == Outcome::Success).count() as f64 / n,
        mean_return: total_return / n,
        mean_episode_length: total_len as f64 / n,
        outcomes,
    }
}
