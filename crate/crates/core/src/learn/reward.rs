use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Progress weight, 1/m.
    pub c_d: f64,
    pub c_a: f64,
    pub c_t: f64,
    pub c_s: f64,
    pub success_radius: f64,
    /// Heading error that ends an episode, rad.
    pub fail_angle: f64,
    pub terminal_success: f64,
    pub terminal_fail: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            c_d: 1.0,
            c_a: 0.02,
            c_t: 0.01,
            c_s: 0.01,
            success_radius: 4.0,
            fail_angle: std::f64::consts::FRAC_PI_6,
            terminal_success: 1.0,
            terminal_fail: -0.5,
        }
    }
}

/// Quantities the step reward depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub d_prev: f64,
    pub d_curr: f64,
    /// Absolute angle between heading and the direction to the target.
    pub theta: f64,
    pub action: [f64; 2],
    pub prev_action: [f64; 2],
}

impl StepContext {
    pub fn delta_d(&self) -> f64 {
        self.d_prev - self.d_curr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    None,
    Success,
    Fail,
}

pub fn compute_reward(ctx: &StepContext, cfg: &RewardConfig, terminal: Terminal) -> f64 {
    match terminal {
        Terminal::Success => cfg.terminal_success,
        Terminal::Fail => cfg.terminal_fail,
        Terminal::None => {
            let da = [ctx.action[0] - ctx.prev_action[0], ctx.action[1] - ctx.prev_action[1]];
            cfg.c_d * ctx.delta_d() + cfg.c_a * (1.0 - 40.0 * ctx.theta * ctx.theta)
                - cfg.c_t
                - cfg.c_s * (da[0] * da[0] + da[1] * da[1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(dd: f64, theta: f64) -> StepContext {
        StepContext { d_prev: 10.0, d_curr: 10.0 - dd, theta, action: [0.3, 0.4], prev_action: [0.3, 0.4] }
    }

    #[test]
    fn hand_substitutions() {
        let cfg = RewardConfig::default();
        assert!((compute_reward(&ctx(0.0, 0.0), &cfg, Terminal::None) - 0.01).abs() < 1e-15);
        assert!((compute_reward(&ctx(0.05, 0.1), &cfg, Terminal::None) - 0.052).abs() < 1e-12);
        assert!((compute_reward(&ctx(0.0, 0.2), &cfg, Terminal::None) + 0.022).abs() < 1e-12);
        assert_eq!(compute_reward(&ctx(0.3, 0.4), &cfg, Terminal::Success), 1.0);
        assert_eq!(compute_reward(&ctx(0.3, 0.4), &cfg, Terminal::Fail), -0.5);
    }
}
