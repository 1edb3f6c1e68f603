//! TOML run configuration. Every section rejects unknown keys, and the
//! resolved form (all defaults expanded) replays a run exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algo::{Algorithm, LrSchedule, PpoConfig, SacConfig, TrainerSetup};
use crate::dynamics::QuadParams;
use crate::env::{EnvConfig, EpisodeSettings, Preset, RewardConfig};
use crate::geom::DuctParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub algo: Algorithm,
    pub n_envs: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Iterations between checkpoints; the last iteration always saves.
    pub checkpoint_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algo: Algorithm::Ppo,
            n_envs: 64,
            total_steps: 1_048_576,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 50,
        }
    }
}

/// Per-term weight overrides on top of the preset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightOverrides {
    pub progress: Option<f64>,
    pub centerline_deviation: Option<f64>,
    pub velocity_tracking: Option<f64>,
    pub orientation_alignment: Option<f64>,
    pub angular_damping: Option<f64>,
    pub action_smoothness: Option<f64>,
    pub waypoint_pass: Option<f64>,
    pub duct_finish: Option<f64>,
    pub crash: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    /// Defaults to the preset matching `run.algo`.
    pub preset: Option<Preset>,
    pub beta_v: Option<f64>,
    pub v_target: Option<f64>,
    pub alpha_yaw: Option<f64>,
    pub alpha_level: Option<f64>,
    pub weights: WeightOverrides,
}

impl RewardSection {
    pub fn resolve(&self, algo: Algorithm) -> RewardConfig {
        let preset = self.preset.unwrap_or(match algo {
            Algorithm::Ppo => Preset::Ppo,
            Algorithm::Sac => Preset::Sac,
        });
        let mut r = RewardConfig::preset(preset);
        let w = &self.weights;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut r.beta_v, self.beta_v);
        set(&mut r.v_target, self.v_target);
        set(&mut r.alpha_yaw, self.alpha_yaw);
        set(&mut r.alpha_level, self.alpha_level);
        set(&mut r.weights.progress, w.progress);
        set(&mut r.weights.centerline_deviation, w.centerline_deviation);
        set(&mut r.weights.velocity_tracking, w.velocity_tracking);
        set(&mut r.weights.orientation_alignment, w.orientation_alignment);
        set(&mut r.weights.angular_damping, w.angular_damping);
        set(&mut r.weights.action_smoothness, w.action_smoothness);
        set(&mut r.weights.waypoint_pass, w.waypoint_pass);
        set(&mut r.weights.duct_finish, w.duct_finish);
        set(&mut r.weights.crash, w.crash);
        r
    }

    /// Section with every field spelled out.
    pub fn explicit(r: &RewardConfig) -> Self {
        let w = &r.weights;
        Self {
            preset: Some(r.preset),
            beta_v: Some(r.beta_v),
            v_target: Some(r.v_target),
            alpha_yaw: Some(r.alpha_yaw),
            alpha_level: Some(r.alpha_level),
            weights: WeightOverrides {
                progress: Some(w.progress),
                centerline_deviation: Some(w.centerline_deviation),
                velocity_tracking: Some(w.velocity_tracking),
                orientation_alignment: Some(w.orientation_alignment),
                angular_damping: Some(w.angular_damping),
                action_smoothness: Some(w.action_smoothness),
                waypoint_pass: Some(w.waypoint_pass),
                duct_finish: Some(w.duct_finish),
                crash: Some(w.crash),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub episodes: usize,
    /// Episode `i` runs on duct seed `seed_start + i`.
    pub seed_start: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { episodes: 20, seed_start: 1000 }
    }
}

impl EvalSettings {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64).map(|i| self.seed_start + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub duct: DuctParams,
    pub quad: QuadParams,
    pub reward: RewardSection,
    pub episode: EpisodeSettings,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.run.n_envs == 0 {
            return invalid("run.n_envs must be positive".into());
        }
        if self.run.checkpoint_every == 0 {
            return invalid("run.checkpoint_every must be positive".into());
        }
        if self.run.seed > i64::MAX as u64 || self.eval.seed_start > i64::MAX as u64 {
            return invalid("run.seed and eval.seed_start must fit in a signed 64-bit integer".into());
        }
        if self.eval.episodes == 0 {
            return invalid("eval.episodes must be positive".into());
        }
        self.ppo.validate().map_err(ConfigError::Invalid)?;
        self.sac.validate().map_err(ConfigError::Invalid)?;
        self.env_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut duct = self.duct;
        duct.n_waypoints = Some(duct.waypoint_count());
        EnvConfig {
            duct,
            quad: self.quad.resolved(),
            reward: self.reward.resolve(self.run.algo),
            episode: self.episode,
        }
    }

    pub fn trainer_setup(&self) -> TrainerSetup {
        TrainerSetup {
            algorithm: self.run.algo,
            env: Arc::new(self.env_config()),
            n_envs: self.run.n_envs,
            seed: self.run.seed,
            ppo: self.ppo.clone(),
            sac: self.sac.clone(),
        }
    }

    /// All defaults expanded, including derived quantities.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.quad = r.quad.resolved();
        r.duct.n_waypoints = Some(r.duct.waypoint_count());
        r.reward = RewardSection::explicit(&self.reward.resolve(self.run.algo));
        r
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash over everything that shapes training. Output location, run
    /// length, checkpoint cadence and evaluation protocol are excluded so a
    /// resumed or extended run still matches its checkpoints.
    pub fn training_hash(&self) -> String {
        let mut core = self.resolved();
        core.run.out_dir = PathBuf::new();
        core.run.total_steps = 0;
        core.run.checkpoint_every = 1;
        core.eval = EvalSettings::default();
        let digest = Sha256::digest(core.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Warnings worth printing before a run starts.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.run.algo == Algorithm::Sac {
            if let LrSchedule::Linear { start, .. } = self.sac.lr {
                if start > 1e-2 {
                    w.push(format!(
                        "sac.lr starts at {start}, far above the usual Adam range; \
                         set [sac.lr] kind = \"constant\", value = 3e-4 for a conservative run"
                    ));
                }
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.duct.radius, 0.25);
        assert_eq!(cfg.eval.seeds(), (1000..1020).collect::<Vec<u64>>());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[ppo]\nhorizn = 12\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("horizn"), "{err}");
        let err = RunConfig::from_toml_str("[reward.weights]\nprogres = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("progres"), "{err}");
        let err = RunConfig::from_toml_str("[quadrotor]\nmass = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("quadrotor"), "{err}");
    }

    #[test]
    fn invalid_value_is_named() {
        let err = RunConfig::from_toml_str("[sac]\ntau = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("sac.tau"), "{err}");
        let err = RunConfig::from_toml_str("[run]\nn_envs = 0\n").unwrap_err();
        assert!(err.to_string().contains("run.n_envs"), "{err}");
    }

    #[test]
    fn reward_preset_follows_algo_with_overrides() {
        let cfg = RunConfig::from_toml_str("[run]\nalgo = \"sac\"\n[reward.weights]\ncrash = 30.0\n").unwrap();
        let r = cfg.env_config().reward;
        assert_eq!(r.preset, Preset::Sac);
        assert_eq!(r.weights.progress, 50.0);
        assert_eq!(r.weights.crash, 30.0);
    }

    #[test]
    fn resolved_round_trips() {
        let text =
            "[run]\nalgo = \"sac\"\nseed = 17\n[duct]\nn_segments = 3\n[sac.lr]\nkind = \"constant\"\nvalue = 0.0003\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        let resolved = cfg.resolved();
        let back = RunConfig::from_toml_str(&resolved.to_toml()).unwrap();
        assert_eq!(back, resolved);
        assert_eq!(back.env_config(), cfg.env_config());
        assert_eq!(back.training_hash(), cfg.training_hash());
        assert_eq!(back.duct.n_waypoints, Some(3));
        assert!(back.quad.k_thrust.is_some());
    }

    #[test]
    fn hash_ignores_run_length_but_not_learning() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.total_steps *= 2;
        b.run.out_dir = "elsewhere".into();
        assert_eq!(a.training_hash(), b.training_hash());
        b.ppo.clip = 0.3;
        assert_ne!(a.training_hash(), b.training_hash());
        assert_eq!(a.training_hash().len(), 64);
    }

    #[test]
    fn sac_lr_warning() {
        let cfg = RunConfig::from_toml_str("[run]\nalgo = \"sac\"\n").unwrap();
        assert_eq!(cfg.warnings().len(), 1);
        assert!(RunConfig::default().warnings().is_empty());
    }
}
