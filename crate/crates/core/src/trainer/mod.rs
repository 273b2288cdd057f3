//! Behavior-cloning pretraining from the shortest-path expert and
//! advantage actor-critic fine-tuning.

mod a3c;
mod oracle;
mod pretrain;

pub use a3c::{train_rl, EpisodeLog, TrainIo, TrainReport};
pub use oracle::oracle_actions;
pub use pretrain::{demonstration, evaluate_demonstrations, pretrain, Demonstration, PretrainConfig, PretrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Unreachable};
use crate::numerics::NumericsError;
use crate::reward::RewardScheme;
use crate::target_memory::MemoryError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Unreachable(#[from] Unreachable),
    #[error("expert replay did not succeed in {0}")]
    OracleFailed(String),
    #[error("no training data")]
    EmptyCorpus,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Actor-critic settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub workers: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub n_step: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub seed: u64,
    pub scheme: RewardScheme,
    /// All workers step in lockstep and gradients are summed into one
    /// update per round. Always used when `workers == 1`.
    pub synchronous: bool,
    /// Gaussian noise on detector confidence during rollouts.
    pub detector_noise: bool,
    /// Save a checkpoint every this many finished episodes (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            episodes: 50_000,
            gamma: 0.99,
            n_step: 20,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 1e-4,
            seed: 0,
            scheme: RewardScheme::Rm,
            synchronous: false,
            detector_noise: true,
            checkpoint_every: 0,
        }
    }
}

/// `R_i = r_i + γ R_{i+1}` with `R_n = bootstrap`.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_of_terminal_success() {
        let r = discounted_returns(&[4.99], 0.0, 0.99);
        assert_eq!(r, vec![4.99]);
        let r = discounted_returns(&[-0.01, -0.01, 4.99], 0.0, 0.5);
        assert!((r[0] - (-0.01 - 0.005 + 4.99 * 0.25)).abs() < 1e-12);
        let r = discounted_returns(&[1.0], 2.0, 0.5);
        assert_eq!(r, vec![2.0]);
    }
}
