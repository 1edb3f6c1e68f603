//! X-configuration quadrotor rigid body.
//!
//! Motor layout seen from above, body x forward, y left, z up:
//!
//! ```text
//!   4 (front-left)    1 (front-right)
//!            \       /
//!              [ ] ---> x
//!            /       \
//!   3 (rear-left)     2 (rear-right)
//! ```
//!
//! Rotors 1 and 3 share a spin direction, as do 2 and 4. `spin_dirs` holds
//! the sign of each rotor's yaw reaction torque.

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;

pub const RPM_TO_RAD_S: f64 = std::f64::consts::PI / 30.0;
pub const HOVER_RPM: f64 = 14468.43;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite rigid state after integration")]
    NonFinite,
    #[error("invalid quadrotor parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadParams {
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub arm_length: f64,
    /// N/(rad/s)^2. Derived from hover balance when unset.
    pub k_thrust: Option<f64>,
    pub k_torque: f64,
    /// rad/s
    pub omega_hover: f64,
    pub spin_dirs: [f64; 4],
    pub dt: f64,
    pub collision_radius: f64,
    pub gravity: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.027,
            inertia_diag: [1.4e-5, 1.4e-5, 2.17e-5],
            arm_length: 0.046,
            k_thrust: None,
            k_torque: 7.8e-11,
            omega_hover: HOVER_RPM * RPM_TO_RAD_S,
            spin_dirs: [-1.0, 1.0, -1.0, 1.0],
            dt: 0.01,
            collision_radius: 0.05,
            gravity: 9.81,
        }
    }
}

impl QuadParams {
    pub fn k_thrust(&self) -> f64 {
        self.k_thrust.unwrap_or_else(|| self.mass * self.gravity / (4.0 * self.omega_hover * self.omega_hover))
    }

    /// Copy with the derived thrust coefficient written out.
    pub fn resolved(mut self) -> Self {
        self.k_thrust = Some(self.k_thrust());
        self
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidParams(m.to_string()));
        let [ix, iy, iz] = self.inertia_diag;
        let positive = [
            ("mass", self.mass),
            ("arm_length", self.arm_length),
            ("omega_hover", self.omega_hover),
            ("dt", self.dt),
            ("gravity", self.gravity),
            ("inertia_diag", ix.min(iy).min(iz)),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(DynamicsError::InvalidParams(format!("quad.{key} must be positive")));
        }
        if !(self.k_torque >= 0.0) {
            return bad("quad.k_torque must be non-negative");
        }
        if !(self.collision_radius >= 0.0) {
            return bad("quad.collision_radius must be non-negative");
        }
        if self.spin_dirs.iter().any(|s| s.abs() != 1.0) || self.spin_dirs.iter().sum::<f64>() != 0.0 {
            return bad("quad.spin_dirs must be two +1 and two -1");
        }
        let hover = 4.0 * self.k_thrust() * self.omega_hover * self.omega_hover;
        let weight = self.mass * self.gravity;
        if ((hover - weight) / weight).abs() > 1e-9 {
            return bad("quad.k_thrust does not balance gravity at omega_hover");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidState {
    pub position: Vec3,
    /// Body attitude: maps body-frame vectors into the world frame.
    pub orientation: UnitQuaternion<f64>,
    pub lin_vel_world: Vec3,
    pub ang_vel_body: Vec3,
}

impl RigidState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
            lin_vel_world: Vec3::zeros(),
            ang_vel_body: Vec3::zeros(),
        }
    }

    pub fn to_body(&self, v_world: &Vec3) -> Vec3 {
        self.orientation.inverse_transform_vector(v_world)
    }

    pub fn lin_vel_body(&self) -> Vec3 {
        self.to_body(&self.lin_vel_world)
    }

    pub fn is_finite(&self) -> bool {
        let q = self.orientation.quaternion();
        self.position.iter().chain(&self.lin_vel_world).chain(&self.ang_vel_body).all(|v| v.is_finite())
            && q.coords.iter().all(|v| v.is_finite())
    }
}

/// Normalized motor command. Components are clamped to `[-1, 1]` on
/// construction; NaN maps to zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorCommand(pub [f64; 4]);

impl MotorCommand {
    pub fn clamped(raw: [f64; 4]) -> Self {
        Self(raw.map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) }))
    }
}

/// External wrench applied on top of the rotor model. Zero by default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub force_world: Vec3,
    pub torque_body: Vec3,
}

pub fn action_to_speed(cmd: &MotorCommand, params: &QuadParams) -> [f64; 4] {
    MotorCommand::clamped(cmd.0).0.map(|a| (1.0 + 0.8 * a) * params.omega_hover)
}

/// Collective thrust along body +z and the body torque vector.
pub fn forces_torques(speeds: &[f64; 4], params: &QuadParams) -> (f64, Vec3) {
    let kf = params.k_thrust();
    let f = speeds.map(|w| kf * w * w);
    let lever = params.arm_length / std::f64::consts::SQRT_2;
    let thrust = f[0] + f[1] + f[2] + f[3];
    // Grouped sums keep the mirrored configurations exact negations.
    let roll = lever * ((f[2] + f[3]) - (f[0] + f[1]));
    let pitch = lever * ((f[1] + f[2]) - (f[0] + f[3]));
    let yaw = speeds.iter().zip(&params.spin_dirs).map(|(w, s)| s * params.k_torque * w * w).sum();
    (thrust, Vec3::new(roll, pitch, yaw))
}

pub fn step_dynamics(state: &RigidState, cmd: &MotorCommand, params: &QuadParams) -> Result<RigidState, DynamicsError> {
    step_dynamics_disturbed(state, cmd, params, &Disturbance::default())
}

/// Semi-implicit Euler: velocities first, then positions and attitude from
/// the updated velocities.
pub fn step_dynamics_disturbed(
    state: &RigidState,
    cmd: &MotorCommand,
    params: &QuadParams,
    dist: &Disturbance,
) -> Result<RigidState, DynamicsError> {
    let dt = params.dt;
    let speeds = action_to_speed(cmd, params);
    let (thrust, torque) = forces_torques(&speeds, params);
    let torque = torque + dist.torque_body;

    let thrust_world = state.orientation.transform_vector(&Vec3::new(0.0, 0.0, thrust));
    let accel = (thrust_world + dist.force_world) / params.mass + Vec3::new(0.0, 0.0, -params.gravity);
    let lin_vel_world = state.lin_vel_world + accel * dt;
    let position = state.position + lin_vel_world * dt;

    let inertia = Vec3::from(params.inertia_diag);
    let w = state.ang_vel_body;
    let gyro = w.cross(&inertia.component_mul(&w));
    let ang_acc = (torque - gyro).component_div(&inertia);
    let ang_vel_body = w + ang_acc * dt;

    let q = state.orientation.into_inner();
    let omega = Quaternion::new(0.0, ang_vel_body.x, ang_vel_body.y, ang_vel_body.z);
    let q_next = q + (q * omega) * (0.5 * dt);
    let orientation = UnitQuaternion::new_normalize(q_next);

    let next = RigidState { position, orientation, lin_vel_world, ang_vel_body };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(DynamicsError::NonFinite)
    }
}
