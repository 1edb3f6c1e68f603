//! Nine-term shaped reward.

use serde::{Deserialize, Serialize};

use crate::dynamics::RigidState;
use crate::geom::Vec3;

pub const N_TERMS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ppo,
    Sac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardTerm {
    Progress,
    CenterlineDeviation,
    VelocityTracking,
    OrientationAlignment,
    AngularDamping,
    ActionSmoothness,
    WaypointPass,
    DuctFinish,
    Crash,
}

impl RewardTerm {
    pub const ALL: [RewardTerm; N_TERMS] = [
        RewardTerm::Progress,
        RewardTerm::CenterlineDeviation,
        RewardTerm::VelocityTracking,
        RewardTerm::OrientationAlignment,
        RewardTerm::AngularDamping,
        RewardTerm::ActionSmoothness,
        RewardTerm::WaypointPass,
        RewardTerm::DuctFinish,
        RewardTerm::Crash,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardTerm::Progress => "progress",
            RewardTerm::CenterlineDeviation => "centerline_deviation",
            RewardTerm::VelocityTracking => "velocity_tracking",
            RewardTerm::OrientationAlignment => "orientation_alignment",
            RewardTerm::AngularDamping => "angular_damping",
            RewardTerm::ActionSmoothness => "action_smoothness",
            RewardTerm::WaypointPass => "waypoint_pass",
            RewardTerm::DuctFinish => "duct_finish",
            RewardTerm::Crash => "crash",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub progress: f64,
    pub centerline_deviation: f64,
    pub velocity_tracking: f64,
    pub orientation_alignment: f64,
    pub angular_damping: f64,
    pub action_smoothness: f64,
    pub waypoint_pass: f64,
    pub duct_finish: f64,
    pub crash: f64,
}

impl RewardWeights {
    pub fn preset(preset: Preset) -> Self {
        let (progress, centerline_deviation, velocity_tracking) = match preset {
            Preset::Ppo => (25.0, 5.0, 3.0),
            Preset::Sac => (50.0, 10.0, 4.0),
        };
        Self {
            progress,
            centerline_deviation,
            velocity_tracking,
            orientation_alignment: 10.0,
            angular_damping: 8.5e-3,
            action_smoothness: 7.0e-3,
            waypoint_pass: 22.0,
            duct_finish: 50.0,
            crash: 17.0,
        }
    }

    pub fn as_array(&self) -> [f64; N_TERMS] {
        [
            self.progress,
            self.centerline_deviation,
            self.velocity_tracking,
            self.orientation_alignment,
            self.angular_damping,
            self.action_smoothness,
            self.waypoint_pass,
            self.duct_finish,
            self.crash,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub preset: Preset,
    pub weights: RewardWeights,
    /// 1/(m/s)
    pub beta_v: f64,
    /// Target forward speed along the local duct axis, m/s.
    pub v_target: f64,
    pub alpha_yaw: f64,
    pub alpha_level: f64,
}

impl RewardConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            weights: RewardWeights::preset(preset),
            beta_v: 2.0,
            v_target: 0.5,
            alpha_yaw: 1.0,
            alpha_level: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        const NAMES: [&str; 9] = [
            "progress",
            "centerline_deviation",
            "velocity_tracking",
            "orientation_alignment",
            "angular_damping",
            "action_smoothness",
            "waypoint_pass",
            "duct_finish",
            "crash",
        ];
        if let Some((name, _)) = NAMES.iter().zip(self.weights.as_array()).find(|(_, w)| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(format!("reward.weights.{name} must be finite and non-negative"));
        }
        if !(self.alpha_yaw >= 0.0 && self.alpha_level >= 0.0 && self.alpha_yaw + self.alpha_level > 0.0) {
            return Err("reward.alpha_yaw and reward.alpha_level must be non-negative with a positive sum".into());
        }
        if !(self.beta_v >= 0.0) {
            return Err("reward.beta_v must be non-negative".into());
        }
        Ok(())
    }
}

/// Body axes and heading reference used by the attitude term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameVectors {
    pub forward_body: Vec3,
    pub up_body: Vec3,
    pub up_world: Vec3,
    /// `None` when the waypoint direction is (near) vertical.
    pub heading: Option<Vec3>,
}

impl FrameVectors {
    pub fn new(rigid: &RigidState, to_waypoint: &Vec3) -> Self {
        let horizontal = Vec3::new(to_waypoint.x, to_waypoint.y, 0.0);
        let heading = match to_waypoint.norm() {
            n if n > 1e-9 => {
                let h = horizontal / n;
                (h.norm() >= 1e-6).then(|| h.normalize())
            }
            _ => None,
        };
        Self {
            forward_body: rigid.orientation.transform_vector(&Vec3::x()),
            up_body: rigid.orientation.transform_vector(&Vec3::z()),
            up_world: Vec3::z(),
            heading,
        }
    }
}

/// Pre-weight term values and their weighted contributions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub raw: [f64; N_TERMS],
    pub weighted: [f64; N_TERMS],
}

impl RewardBreakdown {
    pub fn new(raw: [f64; N_TERMS], weights: &RewardWeights) -> Self {
        let w = weights.as_array();
        let mut weighted = [0.0; N_TERMS];
        for k in 0..N_TERMS {
            weighted[k] = w[k] * raw[k];
        }
        Self { raw, weighted }
    }

    /// Left-to-right sum in table order.
    pub fn total(&self) -> f64 {
        self.weighted.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn raw_term(&self, term: RewardTerm) -> f64 {
        self.raw[term as usize]
    }

    pub fn weighted_term(&self, term: RewardTerm) -> f64 {
        self.weighted[term as usize]
    }
}

/// Everything the reward needs about one transition.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub before: &'a RigidState,
    pub after: &'a RigidState,
    /// World vector from the pre-step position to the targeted waypoint.
    pub to_waypoint: Vec3,
    pub radial_deviation: f64,
    pub duct_radius: f64,
    /// Unit axis of the segment nearest to the post-step position.
    pub local_axis: Vec3,
    pub action: [f64; 4],
    pub prev_action: [f64; 4],
    pub waypoint_passed: bool,
    pub finished: bool,
    pub crashed: bool,
}

pub fn progress(before: &Vec3, after: &Vec3, to_waypoint: &Vec3) -> f64 {
    let n = to_waypoint.norm();
    if n < 1e-9 {
        return 0.0;
    }
    (after - before).dot(&(to_waypoint / n))
}

pub fn orientation_alignment(frames: &FrameVectors, alpha_yaw: f64, alpha_level: f64) -> f64 {
    let level = frames.up_body.dot(&frames.up_world);
    match frames.heading {
        Some(h) => (alpha_yaw * frames.forward_body.dot(&h) + alpha_level * level) / (alpha_yaw + alpha_level),
        None => level,
    }
}

pub fn compute_reward(t: &Transition<'_>, config: &RewardConfig) -> RewardBreakdown {
    let after = t.after;
    let target_world = t.local_axis * config.v_target;
    let vel_err = (after.lin_vel_body() - after.to_body(&target_world)).norm();
    let frames = FrameVectors::new(after, &t.to_waypoint);
    let d_action: f64 = t.action.iter().zip(&t.prev_action).map(|(a, b)| (a - b) * (a - b)).sum();
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };

    let raw = [
        progress(&t.before.position, &after.position, &t.to_waypoint),
        -t.radial_deviation / t.duct_radius,
        (-config.beta_v * vel_err).exp(),
        orientation_alignment(&frames, config.alpha_yaw, config.alpha_level),
        -after.ang_vel_body.norm_squared(),
        -d_action,
        indicator(t.waypoint_passed),
        indicator(t.finished),
        -indicator(t.crashed),
    ];
    RewardBreakdown::new(raw, &config.weights)
}
