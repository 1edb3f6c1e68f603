//! Per-step trajectory export.

use std::io::{self, Write};

use crate::numfmt::sig;

use super::{DuctEnv, StepResult};

pub const TRAJ_HEADER: &str = "step,t,x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,a1,a2,a3,a4,reward,deviation,waypoint_index";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: u32,
    pub t: f64,
    /// x,y,z, qw,qx,qy,qz, vx,vy,vz, wx,wy,wz, a1..a4
    pub state: [f64; 17],
    pub reward: f64,
    pub deviation: f64,
    pub waypoint_index: usize,
}

impl TrajectoryRow {
    /// Row for the state the env holds right after `result` was produced.
    pub fn capture(env: &DuctEnv, result: &StepResult) -> Self {
        let r = env.rigid();
        let q = r.orientation.quaternion();
        let a = env.episode().prev_action;
        let step = env.episode().step_count;
        Self {
            step,
            t: step as f64 * env.config().quad.dt,
            state: [
                r.position.x,
                r.position.y,
                r.position.z,
                q.w,
                q.i,
                q.j,
                q.k,
                r.lin_vel_world.x,
                r.lin_vel_world.y,
                r.lin_vel_world.z,
                r.ang_vel_body.x,
                r.ang_vel_body.y,
                r.ang_vel_body.z,
                a[0],
                a[1],
                a[2],
                a[3],
            ],
            reward: result.reward,
            deviation: result.info.deviation,
            waypoint_index: result.info.waypoint_index,
        }
    }

    pub fn to_csv_line(&self) -> String {
        let mut fields = Vec::with_capacity(22);
        fields.push(self.step.to_string());
        fields.push(sig(self.t, 9));
        fields.extend(self.state.iter().map(|v| sig(*v, 9)));
        fields.push(sig(self.reward, 9));
        fields.push(sig(self.deviation, 9));
        fields.push(self.waypoint_index.to_string());
        fields.join(",")
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryRecorder {
    pub fn record(&mut self, env: &DuctEnv, result: &StepResult) {
        self.rows.push(TrajectoryRow::capture(env, result));
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRAJ_HEADER}")?;
        for row in &self.rows {
            writeln!(out, "{}", row.to_csv_line())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}
