use crate::dynamics::RigidState;
use crate::geom::Vec3;

pub const OBS_DIM: usize = 20;
pub const ACT_DIM: usize = 4;

/// `[p_rel (world), p_rel unit (body), q (w,x,y,z), v_lin body, v_ang body, a_prev]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsVector(pub [f64; OBS_DIM]);

impl ObsVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_f32(&self) -> [f32; OBS_DIM] {
        self.0.map(|v| v as f32)
    }

    pub fn rel_position(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn rel_direction_body(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn quaternion(&self) -> [f64; 4] {
        [self.0[6], self.0[7], self.0[8], self.0[9]]
    }
}

pub fn build_observation(rigid: &RigidState, waypoint: &Vec3, prev_action: &[f64; ACT_DIM]) -> ObsVector {
    let p_rel = waypoint - rigid.position;
    let dir_body = if p_rel.norm() < 1e-9 { Vec3::x() } else { rigid.to_body(&p_rel).normalize() };
    let q = rigid.orientation.quaternion();
    let v = rigid.lin_vel_body();
    let w = rigid.ang_vel_body;
    let a = prev_action;
    ObsVector([
        p_rel.x, p_rel.y, p_rel.z, dir_body.x, dir_body.y, dir_body.z, q.w, q.i, q.j, q.k, v.x, v.y, v.z, w.x, w.y,
        w.z, a[0], a[1], a[2], a[3],
    ])
}

/// Strict proximity test against the `1.5 R` sphere.
pub fn check_waypoint(p_rel: &Vec3, radius: f64) -> bool {
    p_rel.norm() < 1.5 * radius
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, UnitQuaternion};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_at_origin() {
        let obs = build_observation(&RigidState::at_rest(Vec3::zeros()), &Vec3::x(), &[0.0; 4]);
        let expected = [1., 0., 0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.];
        assert_eq!(obs.0, expected);
        assert_eq!(obs.as_slice().len(), OBS_DIM);
    }

    #[test]
    fn yawed_body_direction_matches_matrix_oracle() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let s = RigidState { orientation: q, ..RigidState::at_rest(Vec3::zeros()) };
        let obs = build_observation(&s, &Vec3::new(3.0, 0.0, 0.0), &[0.0; 4]);
        // Rotation matrix for +90 deg yaw written out by hand; body = R^T world.
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = r.transpose() * Vec3::x();
        assert!((obs.rel_direction_body() - expected).norm() < 1e-9);
        assert!((obs.rel_direction_body() - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-9);
        let qn: f64 = obs.quaternion().iter().map(|c| c * c).sum();
        assert!((qn.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_direction_uses_forward_axis() {
        let s = RigidState::at_rest(Vec3::new(1.0, 2.0, 3.0));
        let obs = build_observation(&s, &Vec3::new(1.0, 2.0, 3.0), &[0.5; 4]);
        assert_eq!(obs.rel_direction_body(), Vec3::x());
        assert_eq!(&obs.0[16..], &[0.5; 4]);
    }

    #[test]
    fn waypoint_threshold_is_strict() {
        assert!(check_waypoint(&Vec3::zeros(), 0.25));
        assert!(check_waypoint(&Vec3::new(0.374, 0.0, 0.0), 0.25));
        assert!(!check_waypoint(&Vec3::new(0.375, 0.0, 0.0), 0.25));
    }
}
