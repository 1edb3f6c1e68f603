//! Deterministic evaluation: fly fixed-seed ducts with a pilot and aggregate
//! waypoints, collisions, deviation and reward.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::algo::Algorithm;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::dynamics::RigidState;
use crate::env::{DuctEnv, EnvConfig, EnvError, TerminationCause, TrajectoryRecorder, ACT_DIM, OBS_DIM};
use crate::geom::Vec3;
use crate::nets::{Mlp, MlpSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// What the pilot wants to happen on the next control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    /// Integrate the dynamics under this motor action.
    Action([f64; ACT_DIM]),
    /// Teleport to this state and score it as if flown with the action.
    Kinematic(RigidState, [f64; ACT_DIM]),
}

pub trait Pilot: Sync {
    fn control(&self, env: &DuctEnv) -> Control;
}

/// Deterministic policy restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub algorithm: Algorithm,
    pub actor: Mlp<f32>,
}

impl Policy {
    /// Mean action for PPO, `tanh(mean)` for SAC.
    pub fn act(&self, obs: &[f32; OBS_DIM]) -> [f64; ACT_DIM] {
        let x = Array2::from_shape_vec((1, OBS_DIM), obs.to_vec()).unwrap();
        let out = self.actor.predict(x.view()).expect("observation width");
        std::array::from_fn(|j| match self.algorithm {
            Algorithm::Ppo => out[[0, j]] as f64,
            Algorithm::Sac => (out[[0, j]] as f64).tanh(),
        })
    }
}

impl Pilot for Policy {
    fn control(&self, env: &DuctEnv) -> Control {
        Control::Action(self.act(&env.observe().to_f32()))
    }
}

/// A checkpoint's policy together with the config it was trained under.
#[derive(Debug, Clone)]
pub struct LoadedPolicy {
    pub config: RunConfig,
    pub policy: Policy,
    pub iteration: u64,
    pub env_steps: u64,
}

impl LoadedPolicy {
    /// Rejects checkpoints whose embedded config does not hash to the
    /// recorded value, or, when `expected` is given, differs from it.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&RunConfig>) -> Result<Self, EvalError> {
        let config = RunConfig::from_toml_str(&ckpt.config)?;
        if config.training_hash() != ckpt.config_hash {
            return Err(CheckpointError::Mismatch("embedded config does not match the checkpoint hash".into()).into());
        }
        if let Some(exp) = expected {
            if exp.training_hash() != ckpt.config_hash {
                return Err(CheckpointError::Mismatch(
                    "checkpoint was trained with a different config than the one given".into(),
                )
                .into());
            }
        }
        let (hidden, out) = match ckpt.algorithm {
            Algorithm::Ppo => (&config.ppo.hidden, ACT_DIM),
            Algorithm::Sac => (&config.sac.hidden, 2 * ACT_DIM),
        };
        let mut actor =
            Mlp::new(MlpSpec::new(OBS_DIM, hidden, out)).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        let n = actor.num_params();
        actor.params.copy_from_slice(ckpt.f32s("actor.params", Some(n))?);
        Ok(Self {
            config,
            policy: Policy { algorithm: ckpt.algorithm, actor },
            iteration: ckpt.iteration,
            env_steps: ckpt.env_steps,
        })
    }
}

/// Kinematic pilot flying parallel to the centerline at a fixed speed and
/// lateral offset, level and without yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlinePilot {
    pub speed: f64,
    pub offset: f64,
}

impl CenterlinePilot {
    fn lateral(axis: &Vec3) -> Vec3 {
        let up = if axis.z.abs() < 0.9 { Vec3::z() } else { Vec3::y() };
        axis.cross(&up).normalize()
    }
}

impl Pilot for CenterlinePilot {
    fn control(&self, env: &DuctEnv) -> Control {
        let duct = env.duct();
        let q = duct.closest_centerline(&env.rigid().position);
        let dt = env.config().quad.dt;
        let s = q.arc_length + self.speed * dt;
        let axis = duct.segments[duct.segment_at_arc(s.min(duct.total_length()))].direction;
        let mut next = RigidState::at_rest(duct.point_at_arc(s) + self.offset * Self::lateral(&axis));
        next.orientation = UnitQuaternion::identity();
        next.lin_vel_world = self.speed * axis;
        Control::Kinematic(next, [0.0; ACT_DIM])
    }
}

/// Kinematic pilot drifting sideways into the wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallPilot {
    pub speed: f64,
}

impl Pilot for WallPilot {
    fn control(&self, env: &DuctEnv) -> Control {
        let duct = env.duct();
        let rigid = env.rigid();
        let q = duct.closest_centerline(&rigid.position);
        let axis = duct.segments[q.segment_index].direction;
        let side = CenterlinePilot::lateral(&axis);
        let mut next = *rigid;
        next.lin_vel_world = self.speed * side;
        next.position += next.lin_vel_world * env.config().quad.dt;
        Control::Kinematic(next, [0.0; ACT_DIM])
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub steps: u32,
    pub total_reward: f64,
    pub waypoints: usize,
    pub n_waypoints: usize,
    pub collisions: u32,
    pub deviation_sum: f64,
    pub deviation_max: f64,
    pub cause: TerminationCause,
    pub trajectory: Option<TrajectoryRecorder>,
}

impl EpisodeRecord {
    pub fn mean_deviation(&self) -> f64 {
        self.deviation_sum / self.steps as f64
    }
}

pub const EPISODES_HEADER: &str =
    "seed,steps,total_reward,waypoints,n_waypoints,collisions,deviation_sum,mean_deviation,max_deviation,cause";

fn cause_name(c: TerminationCause) -> &'static str {
    match c {
        TerminationCause::Crash => "crash",
        TerminationCause::Finish => "finish",
        TerminationCause::Timeout => "timeout",
    }
}

/// Per-episode CSV with shortest round-trip floats, so the report can be
/// recomputed from it exactly.
pub fn episodes_csv(records: &[EpisodeRecord]) -> String {
    let mut s = String::from(EPISODES_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.steps,
            r.total_reward,
            r.waypoints,
            r.n_waypoints,
            r.collisions,
            r.deviation_sum,
            r.mean_deviation(),
            r.deviation_max,
            cause_name(r.cause)
        );
    }
    s
}

/// Flies one episode on the duct for `seed`.
pub fn run_episode(
    config: &Arc<EnvConfig>,
    pilot: &dyn Pilot,
    seed: u64,
    record: bool,
) -> Result<EpisodeRecord, EnvError> {
    let mut env = DuctEnv::new(Arc::clone(config), seed)?;
    let mut traj = record.then(TrajectoryRecorder::default);
    loop {
        let result = match pilot.control(&env) {
            Control::Action(a) => env.step(a)?,
            Control::Kinematic(next, a) => env.step_kinematic(next, a)?,
        };
        if let Some(t) = traj.as_mut() {
            t.record(&env, &result);
        }
        if let Some(ep) = result.info.episode {
            return Ok(EpisodeRecord {
                seed,
                steps: ep.length,
                total_reward: ep.metrics.total_reward,
                waypoints: ep.waypoints_passed,
                n_waypoints: env.duct().waypoints.len(),
                collisions: ep.metrics.collisions,
                deviation_sum: ep.metrics.deviation_sum,
                deviation_max: ep.metrics.deviation_max,
                cause: ep.cause,
                trajectory: traj,
            });
        }
    }
}

/// Runs the episodes in parallel; records come back in seed order.
pub fn evaluate(
    config: &Arc<EnvConfig>,
    pilot: &dyn Pilot,
    seeds: &[u64],
    record: bool,
) -> Result<Vec<EpisodeRecord>, EnvError> {
    seeds.par_iter().map(|&s| run_episode(config, pilot, s, record)).collect()
}

/// One report row, aggregated over a set of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub n_waypoints: usize,
    pub avg_reward: f64,
    pub avg_waypoints: f64,
    pub avg_collisions: f64,
    /// Mean over all steps of all episodes.
    pub avg_deviation: f64,
    pub max_deviation: f64,
}

impl EvalRow {
    pub fn from_records(label: &str, records: &[EpisodeRecord]) -> Self {
        assert!(!records.is_empty(), "no episodes to aggregate");
        let n = records.len() as f64;
        let steps: u64 = records.iter().map(|r| r.steps as u64).sum();
        Self {
            label: label.to_string(),
            episodes: records.len(),
            seeds: records.iter().map(|r| r.seed).collect(),
            n_waypoints: records.iter().map(|r| r.n_waypoints).max().unwrap_or(0),
            avg_reward: records.iter().map(|r| r.total_reward).sum::<f64>() / n,
            avg_waypoints: records.iter().map(|r| r.waypoints as f64).sum::<f64>() / n,
            avg_collisions: records.iter().map(|r| r.collisions as f64).sum::<f64>() / n,
            avg_deviation: records.iter().map(|r| r.deviation_sum).sum::<f64>() / steps as f64,
            max_deviation: records.iter().map(|r| r.deviation_max).fold(0.0, f64::max),
        }
    }

    fn seed_set(&self) -> String {
        let contiguous = self.seeds.windows(2).all(|w| w[1] == w[0] + 1);
        match (self.seeds.first(), self.seeds.last()) {
            (Some(a), Some(b)) if contiguous && self.seeds.len() > 1 => format!("{a}..{b}"),
            _ => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str =
    "label,episodes,avg_reward,avg_waypoints,n_waypoints,avg_collisions,avg_deviation,max_deviation,seeds";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.label,
                r.episodes,
                r.avg_reward,
                r.avg_waypoints,
                r.n_waypoints,
                r.avg_collisions,
                r.avg_deviation,
                r.max_deviation,
                r.seed_set()
            );
        }
        s
    }

    /// Fixed-width table in the layout of a results table.
    pub fn to_table(&self) -> String {
        let head = [
            "Checkpoint",
            "Average Reward",
            "Avg. Waypoints Passed",
            "Avg. Collisions/Episode",
            "Average Deviation (m)",
            "Maximum Deviation (m)",
            "Episodes",
            "Seeds",
        ];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("{:.2}", r.avg_reward),
                    format!("{:.2} / {}", r.avg_waypoints, r.n_waypoints),
                    format!("{:.2}", r.avg_collisions),
                    format!("{:.4}", r.avg_deviation),
                    format!("{:.4}", r.max_deviation),
                    r.episodes.to_string(),
                    r.seed_set(),
                ]
            })
            .collect();
        let widths: Vec<usize> =
            (0..head.len()).map(|c| body.iter().map(|row| row[c].len()).fold(head[c].len(), usize::max)).collect();
        let line = |cells: Vec<&str>| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        let mut out = line(head.to_vec());
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}
