//! Oracle observation: privileged robot state plus one-frame differences to
//! the next reference frame, all expressed in the robot's current root frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::simulator::kinematics::{rotate_into, sub, wrap_angle};
use crate::simulator::{RobotModel, SimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleObs {
    /// Keypoints (excluding the root) relative to the root, keypoint
    /// velocities, joint positions and velocities, root angular velocity and
    /// previous action.
    pub proprio: Vec<f64>,
    /// Keypoint offsets to the reference, joint-position error, orientation
    /// error, keypoint-velocity error, angular-velocity error, reference
    /// keypoints relative to the robot root, and root orientation error.
    pub goal: Vec<f64>,
}

impl OracleObs {
    pub fn proprio_dim(model: &RobotModel) -> usize {
        let nk = model.n_keypoints();
        let nj = model.n_joints();
        2 * (nk - 1) + 2 * nk + 3 * nj + 1
    }

    pub fn goal_dim(model: &RobotModel) -> usize {
        let nk = model.n_keypoints();
        6 * nk + model.n_joints() + 3
    }

    pub fn dim(model: &RobotModel) -> usize {
        Self::proprio_dim(model) + Self::goal_dim(model)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.proprio.clone();
        v.extend_from_slice(&self.goal);
        v
    }
}

/// Build the oracle observation for a robot at reference frame `frame`,
/// targeting frame `frame + 1`.
pub fn build_oracle_obs(model: &RobotModel, state: &SimState, clip: &MotionClip, frame: usize) -> Result<OracleObs> {
    if frame + 1 >= clip.len() {
        return Err(Error::invalid(format!(
            "oracle observation needs frame + 1 < {}, got frame {frame}",
            clip.len()
        )));
    }
    let phi = state.root_angle;
    let local = |v| rotate_into(v, phi);
    let kp = state.keypoints(model);
    let kv = state.keypoint_velocities(model);
    let target = &clip.frames[frame + 1];
    let target_vel = clip.keypoint_velocities(frame + 1);
    let root = state.root_pos;

    let mut proprio = Vec::with_capacity(OracleObs::proprio_dim(model));
    for p in &kp[1..] {
        proprio.extend(local(sub(*p, root)));
    }
    for v in &kv {
        proprio.extend(local(*v));
    }
    proprio.extend_from_slice(&state.q);
    proprio.extend_from_slice(&state.qdot);
    proprio.push(state.root_angvel);
    proprio.extend_from_slice(&state.prev_action);

    let dtheta = wrap_angle(target.root_angle - phi);
    let mut goal = Vec::with_capacity(OracleObs::goal_dim(model));
    for (p_ref, p) in target.keypoints.iter().zip(&kp) {
        goal.extend(local(sub(*p_ref, *p)));
    }
    goal.extend(target.q.iter().zip(&state.q).map(|(a, b)| a - b));
    goal.push(dtheta);
    for (v_ref, v) in target_vel.iter().zip(&kv) {
        goal.extend(local(sub(*v_ref, *v)));
    }
    goal.push(target.root_angvel - state.root_angvel);
    for p_ref in &target.keypoints {
        goal.extend(local(sub(*p_ref, root)));
    }
    goal.push(dtheta);
    Ok(OracleObs { proprio, goal })
}
