//! PPO learner with dual discount streams, the confidence-gated ensemble and
//! the training loop that ties memory, reflection and curiosity together.

pub mod baseline;
pub mod gae;
pub mod policy;
pub mod ppo;
pub mod qlearn;
pub mod rollout;
pub mod train;

pub use gae::{compute_gae, normalize_advantages, GaeOutput};
pub use policy::{PolicyNet, PolicyOptimizer};
pub use ppo::{ppo_update, PpoBatch, PpoConfig, PpoStats};
pub use qlearn::{q_learning_step, train_q_learning, EpsilonSchedule};
pub use rollout::{collect_rollout, ensemble_action, ActionSource, EpisodeRecord, Rollout};
pub use train::{train, MetricsRow, TrainConfig, Trainer, METRICS_HEADER};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub ext_coef: f64,
    pub int_coef: f64,
    pub gamma_ext: f64,
    pub gamma_int: f64,
    pub gae_lambda: f64,
    /// Upper bound applied to the normalized intrinsic reward.
    pub int_clip: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            ext_coef: 2.0,
            int_coef: 1.0,
            gamma_ext: 0.999,
            gamma_int: 0.99,
            gae_lambda: 0.95,
            int_clip: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ext_coef >= 0.0 && self.int_coef >= 0.0) {
            return Err(Error::Validation("reward coefficients must be non-negative".into()));
        }
        for (name, g) in [("gamma_ext", self.gamma_ext), ("gamma_int", self.gamma_int)] {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1), got {g}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Validation(format!("GAE λ must lie in [0, 1], got {}", self.gae_lambda)));
        }
        if let Some(c) = self.int_clip {
            if !(c > 0.0) {
                return Err(Error::Validation(format!("int_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub kappa: f64,
    /// Envs with index ≥ `n_envs − ensemble_env_count` may act from memory.
    pub ensemble_env_count: usize,
    pub failure_window: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { kappa: 0.85, ensemble_env_count: 16, failure_window: 10 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self, n_envs: usize) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::Validation(format!("κ must be non-negative, got {}", self.kappa)));
        }
        if self.ensemble_env_count > n_envs {
            return Err(Error::Validation(format!(
                "{} ensemble envs requested but only {n_envs} envs exist",
                self.ensemble_env_count
            )));
        }
        if self.failure_window == 0 {
            return Err(Error::Validation("failure window must be positive".into()));
        }
        Ok(())
    }

    pub fn is_ensemble_env(&self, env: usize, n_envs: usize) -> bool {
        env >= n_envs - self.ensemble_env_count
    }
}
