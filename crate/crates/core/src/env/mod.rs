//! Single-episode duct navigation logic and the lock-step batch.

mod obs;
pub mod reward;
mod traj;
mod vec;

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{step_dynamics, DynamicsError, MotorCommand, QuadParams, RigidState};
use crate::geom::{generate_duct, Duct, DuctParams, GeomError, Vec3};
use crate::rng::{seeded, RngState, SimRng};

pub use obs::{build_observation, check_waypoint, ObsVector, ACT_DIM, OBS_DIM};
pub use reward::{compute_reward, FrameVectors, Preset, RewardBreakdown, RewardConfig, RewardTerm, RewardWeights};
pub use traj::{TrajectoryRecorder, TrajectoryRow, TRAJ_HEADER};
pub use vec::{FlatStep, VecEnv};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already terminated; reset before stepping")]
    EpisodeOver,
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSettings {
    /// Truncation budget in control steps.
    pub max_steps: u32,
    /// Spawn arc length along the centerline, meters.
    pub spawn_arc: f64,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self { max_steps: 1500, spawn_arc: 0.2 }
    }
}

/// Everything needed to build and step one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub duct: DuctParams,
    pub quad: QuadParams,
    pub reward: RewardConfig,
    pub episode: EpisodeSettings,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            duct: DuctParams::default(),
            quad: QuadParams::default(),
            reward: RewardConfig::preset(Preset::Ppo),
            episode: EpisodeSettings::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.duct.validate()?;
        self.quad.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        self.reward.validate().map_err(EnvError::Config)?;
        if self.episode.max_steps == 0 {
            return Err(EnvError::Config("episode.max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationCause {
    Crash,
    Finish,
    Timeout,
}

impl TerminationCause {
    fn code(self) -> u64 {
        match self {
            TerminationCause::Crash => 1,
            TerminationCause::Finish => 2,
            TerminationCause::Timeout => 3,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        match c {
            1 => Some(TerminationCause::Crash),
            2 => Some(TerminationCause::Finish),
            3 => Some(TerminationCause::Timeout),
            _ => None,
        }
    }
}

/// Running per-episode aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub total_reward: f64,
    pub deviation_sum: f64,
    pub deviation_max: f64,
    pub collisions: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeState {
    pub waypoint_index: usize,
    pub prev_action: [f64; ACT_DIM],
    pub step_count: u32,
    pub ended: Option<TerminationCause>,
    pub metrics: EpisodeMetrics,
}

impl EpisodeState {
    pub fn mean_deviation(&self) -> f64 {
        if self.step_count == 0 {
            0.0
        } else {
            self.metrics.deviation_sum / self.step_count as f64
        }
    }
}

/// Summary emitted on the step that ends an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub cause: TerminationCause,
    pub length: u32,
    pub waypoints_passed: usize,
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub deviation: f64,
    pub waypoint_passed: bool,
    pub waypoint_index: usize,
    /// The action was non-finite and replaced by zeros.
    pub fault: bool,
    pub episode: Option<EpisodeSummary>,
    /// Last observation of an episode that was auto-reset on this step.
    pub terminal_observation: Option<ObsVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: ObsVector,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    /// Crash or finish.
    pub terminated: bool,
    /// Step budget exhausted.
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Termination status after a transition into `rigid`.
pub fn check_termination(
    rigid: &RigidState,
    duct: &Duct,
    ep: &EpisodeState,
    quad: &QuadParams,
    max_steps: u32,
) -> Option<TerminationCause> {
    if !rigid.is_finite() || duct.clearance(&rigid.position) < quad.collision_radius {
        Some(TerminationCause::Crash)
    } else if ep.waypoint_index >= duct.waypoints.len() {
        Some(TerminationCause::Finish)
    } else if ep.step_count >= max_steps {
        Some(TerminationCause::Timeout)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct DuctEnv {
    config: Arc<EnvConfig>,
    rng: SimRng,
    duct: Duct,
    rigid: RigidState,
    episode: EpisodeState,
}

/// Resumable state of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub rng: RngState,
    pub duct_seed: u64,
    pub rigid: RigidState,
    pub episode: EpisodeState,
}

impl EnvSnapshot {
    pub const F64_WORDS: usize = 3 + 4 + 3 + 3 + 4 + 4;
    pub const U64_WORDS: usize = RngState::WORDS + 5;

    pub fn to_words(&self) -> (Vec<f64>, Vec<u64>) {
        let r = &self.rigid;
        let q = r.orientation.quaternion();
        let m = &self.episode.metrics;
        let mut f = Vec::with_capacity(Self::F64_WORDS);
        f.extend(r.position.iter());
        f.extend([q.w, q.i, q.j, q.k]);
        f.extend(r.lin_vel_world.iter());
        f.extend(r.ang_vel_body.iter());
        f.extend(self.episode.prev_action);
        f.extend([m.total_reward, m.deviation_sum, m.deviation_max, m.collisions as f64]);
        let mut u = Vec::with_capacity(Self::U64_WORDS);
        u.extend(self.rng.to_words());
        u.extend([
            self.duct_seed,
            self.episode.waypoint_index as u64,
            self.episode.step_count as u64,
            self.episode.ended.map_or(0, TerminationCause::code),
            0,
        ]);
        (f, u)
    }

    pub fn from_words(f: &[f64], u: &[u64]) -> Self {
        use nalgebra::{Quaternion, UnitQuaternion};
        let v3 = |i: usize| Vec3::new(f[i], f[i + 1], f[i + 2]);
        // Stored quaternions are already unit; skip renormalization so the
        // restored bits match.
        let orientation = UnitQuaternion::new_unchecked(Quaternion::new(f[3], f[4], f[5], f[6]));
        let rigid = RigidState { position: v3(0), orientation, lin_vel_world: v3(7), ang_vel_body: v3(10) };
        let w = RngState::WORDS;
        let episode = EpisodeState {
            waypoint_index: u[w + 1] as usize,
            prev_action: [f[13], f[14], f[15], f[16]],
            step_count: u[w + 2] as u32,
            ended: TerminationCause::from_code(u[w + 3]),
            metrics: EpisodeMetrics {
                total_reward: f[17],
                deviation_sum: f[18],
                deviation_max: f[19],
                collisions: f[20] as u32,
            },
        };
        Self { rng: RngState::from_words(&u[..w]), duct_seed: u[w], rigid, episode }
    }
}

impl DuctEnv {
    pub fn new(config: Arc<EnvConfig>, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let duct = generate_duct(&DuctParams { seed, ..config.duct })?;
        let mut env = Self {
            rigid: RigidState::at_rest(Vec3::zeros()),
            episode: EpisodeState::default(),
            rng: seeded(seed),
            duct,
            config,
        };
        env.spawn();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn duct(&self) -> &Duct {
        &self.duct
    }

    pub fn rigid(&self) -> &RigidState {
        &self.rigid
    }

    pub fn episode(&self) -> &EpisodeState {
        &self.episode
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// Restarts the RNG stream from `seed` and builds the duct for it.
    pub fn reset(&mut self, seed: u64) -> Result<ObsVector, EnvError> {
        self.rng = seeded(seed);
        self.load_duct(seed)?;
        Ok(self.observe())
    }

    /// Fresh episode on a duct seeded from this env's own stream.
    pub fn auto_reset(&mut self) -> Result<ObsVector, EnvError> {
        let seed = self.rng.next_u64();
        self.load_duct(seed)?;
        Ok(self.observe())
    }

    fn load_duct(&mut self, seed: u64) -> Result<(), EnvError> {
        self.duct = generate_duct(&DuctParams { seed, ..self.config.duct })?;
        self.spawn();
        Ok(())
    }

    fn spawn(&mut self) {
        let start = self.duct.point_at_arc(self.config.episode.spawn_arc);
        self.rigid = RigidState::at_rest(start);
        self.episode = EpisodeState::default();
    }

    /// Places the drone at an arbitrary state without touching episode
    /// progress. Intended for scripted evaluation and tests.
    pub fn set_rigid(&mut self, rigid: RigidState) {
        self.rigid = rigid;
    }

    pub fn active_waypoint(&self) -> Vec3 {
        let i = self.episode.waypoint_index.min(self.duct.waypoints.len() - 1);
        self.duct.waypoints[i]
    }

    pub fn observe(&self) -> ObsVector {
        build_observation(&self.rigid, &self.active_waypoint(), &self.episode.prev_action)
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            rng: RngState::capture(&self.rng),
            duct_seed: self.duct.seed,
            rigid: self.rigid,
            episode: self.episode,
        }
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) -> Result<(), EnvError> {
        self.duct = generate_duct(&DuctParams { seed: snap.duct_seed, ..self.config.duct })?;
        self.rng = snap.rng.restore();
        self.rigid = snap.rigid;
        self.episode = snap.episode;
        Ok(())
    }

    /// Clamp, integrate, then score the transition.
    pub fn step(&mut self, action: [f64; ACT_DIM]) -> Result<StepResult, EnvError> {
        if self.episode.ended.is_some() {
            return Err(EnvError::EpisodeOver);
        }
        let fault = action.iter().any(|a| !a.is_finite());
        let action = if fault { [0.0; ACT_DIM] } else { action };
        let cmd = MotorCommand::clamped(action);
        let next = step_dynamics(&self.rigid, &cmd, &self.config.quad);
        Ok(self.advance(next, cmd, fault))
    }

    /// Moves the drone to `next` directly, bypassing the dynamics, and scores
    /// the transition as if it had been flown with `action`.
    pub fn step_kinematic(&mut self, next: RigidState, action: [f64; ACT_DIM]) -> Result<StepResult, EnvError> {
        if self.episode.ended.is_some() {
            return Err(EnvError::EpisodeOver);
        }
        let next = if next.is_finite() { Ok(next) } else { Err(DynamicsError::NonFinite) };
        Ok(self.advance(next, MotorCommand::clamped(action), false))
    }

    fn advance(&mut self, next: Result<RigidState, DynamicsError>, cmd: MotorCommand, fault: bool) -> StepResult {
        let cfg = Arc::clone(&self.config);
        let before = self.rigid;
        // A non-finite integration freezes the drone where it was and crashes.
        let (after, diverged) = match next {
            Ok(s) => (s, false),
            Err(_) => (before, true),
        };
        let target = self.active_waypoint();
        let to_waypoint = target - before.position;
        self.episode.step_count += 1;

        let crashed = diverged || self.duct.clearance(&after.position) < cfg.quad.collision_radius;
        let mut passed = false;
        if !crashed && check_waypoint(&(target - after.position), self.duct.radius()) {
            passed = true;
            self.episode.waypoint_index += 1;
        }
        let cause = if crashed {
            Some(TerminationCause::Crash)
        } else {
            check_termination(&after, &self.duct, &self.episode, &cfg.quad, cfg.episode.max_steps)
        };
        let finished = cause == Some(TerminationCause::Finish);

        let centerline = self.duct.closest_centerline(&after.position);
        let breakdown = compute_reward(
            &reward::Transition {
                before: &before,
                after: &after,
                to_waypoint,
                radial_deviation: centerline.radial_deviation,
                duct_radius: self.duct.radius(),
                local_axis: self.duct.segments[centerline.segment_index].direction,
                action: cmd.0,
                prev_action: self.episode.prev_action,
                waypoint_passed: passed,
                finished,
                crashed,
            },
            &cfg.reward,
        );
        let reward = breakdown.total();

        self.rigid = after;
        self.episode.prev_action = cmd.0;
        self.episode.ended = cause;
        let m = &mut self.episode.metrics;
        m.total_reward += reward;
        m.deviation_sum += centerline.radial_deviation;
        m.deviation_max = m.deviation_max.max(centerline.radial_deviation);
        if crashed {
            m.collisions += 1;
        }

        let episode = cause.map(|cause| EpisodeSummary {
            cause,
            length: self.episode.step_count,
            waypoints_passed: self.episode.waypoint_index,
            metrics: self.episode.metrics,
        });
        StepResult {
            obs: self.observe(),
            reward,
            breakdown,
            terminated: matches!(cause, Some(TerminationCause::Crash | TerminationCause::Finish)),
            truncated: cause == Some(TerminationCause::Timeout),
            info: StepInfo {
                deviation: centerline.radial_deviation,
                waypoint_passed: passed,
                waypoint_index: self.episode.waypoint_index,
                fault,
                episode,
                terminal_observation: None,
            },
        }
    }
}
