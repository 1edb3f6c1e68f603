//! PPO and SAC trainers over [`VecEnv`](crate::env::VecEnv).

mod gae;
mod ppo;
mod replay;
mod sac;
mod schedule;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gae::{clipped_surrogate, compute_gae};
pub use ppo::{adapt_lr, diag_gaussian_kl, ppo_update, PpoAgent, PpoConfig, PpoStats, RolloutBuffer};
pub use replay::{ReplayBuffer, ReplaySample};
pub use sac::{sac_update, soft_q_target, SacAgent, SacConfig, SacStats};
pub use schedule::{lr_at, soft_update, LrSchedule};
pub use train::{derive_seeds, Agent, TrainError, Trainer, TrainerSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Sac,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Sac => "sac",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "sac" => Ok(Algorithm::Sac),
            other => Err(format!("unknown algorithm `{other}` (expected ppo or sac)")),
        }
    }
}

pub const STATS_HEADER: &str =
    "iteration,env_steps,mean_reward,mean_ep_len,kl,clip_frac,actor_loss,critic_loss,alpha,lr";

/// One row of the training log. Fields that do not apply to the algorithm,
/// or iterations without a finished episode, are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub mean_ep_len: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub alpha: f64,
    pub lr: f64,
    pub episodes: usize,
    pub fault: bool,
}

impl IterationStats {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_reward,
            self.mean_ep_len,
            self.kl,
            self.clip_frac,
            self.actor_loss,
            self.critic_loss,
            self.alpha,
            self.lr
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_parse() {
        assert_eq!("sac".parse::<Algorithm>().unwrap(), Algorithm::Sac);
        assert!("td3".parse::<Algorithm>().is_err());
        assert_eq!(Algorithm::Ppo.to_string(), "ppo");
    }

    #[test]
    fn csv_has_ten_columns() {
        let s = IterationStats {
            iteration: 1,
            env_steps: 4096,
            mean_reward: f64::NAN,
            mean_ep_len: 12.5,
            kl: 0.01,
            clip_frac: 0.1,
            actor_loss: -0.2,
            critic_loss: 3.0,
            alpha: f64::NAN,
            lr: 1e-3,
            episodes: 0,
            fault: false,
        };
        assert_eq!(s.csv_line().split(',').count(), STATS_HEADER.split(',').count());
        assert!(s.csv_line().starts_with("1,4096,NaN,12.5,"));
    }
}
