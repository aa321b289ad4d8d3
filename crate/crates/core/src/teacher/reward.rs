//! Tracking reward: exponential task kernels plus curriculum-weighted
//! regularization penalties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::simulator::kinematics::{norm, sub};
use crate::simulator::{RobotModel, SimState, StepInfo};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curriculum {
    /// Multiplier rises linearly from `start` to 1 over the first `ramp`
    /// fraction of training, then stays at 1.
    Linear { start: f64, ramp: f64 },
    Constant,
}

impl Curriculum {
    pub fn multiplier(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        match *self {
            Curriculum::Constant => 1.0,
            Curriculum::Linear { start, ramp } => {
                if ramp <= 0.0 {
                    1.0
                } else {
                    start + (1.0 - start) * (p / ramp).min(1.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_kp: f64,
    pub w_jpos: f64,
    pub w_jvel: f64,
    pub w_linvel: f64,
    pub sigma_kp: f64,
    pub sigma_jpos: f64,
    pub sigma_jvel: f64,
    pub sigma_linvel: f64,
    pub w_action_rate: f64,
    pub w_torque: f64,
    pub w_slip: f64,
    pub curriculum: Curriculum,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_kp: 1.0,
            w_jpos: 0.8,
            w_jvel: 0.2,
            w_linvel: 0.5,
            sigma_kp: 0.3,
            sigma_jpos: 0.5,
            sigma_jvel: 3.0,
            sigma_linvel: 1.0,
            w_action_rate: 0.1,
            w_torque: 1e-4,
            w_slip: 0.3,
            curriculum: Curriculum::Linear { start: 0.0, ramp: 0.5 },
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let task = [self.w_kp, self.w_jpos, self.w_jvel, self.w_linvel];
        let sig = [self.sigma_kp, self.sigma_jpos, self.sigma_jvel, self.sigma_linvel];
        let pen = [self.w_action_rate, self.w_torque, self.w_slip];
        if task.iter().chain(&pen).any(|w| !(*w >= 0.0)) || sig.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("reward weights must be ≥ 0 and kernel scales > 0".into()));
        }
        if let Curriculum::Linear { start, ramp } = self.curriculum {
            if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&ramp) {
                return Err(Error::Config("curriculum start and ramp must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn task_sum(&self) -> f64 {
        self.w_kp + self.w_jpos + self.w_jvel + self.w_linvel
    }
}

/// Per-term reward values; `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub keypoint: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub linear_vel: f64,
    pub action_rate: f64,
    pub torque: f64,
    pub slip: f64,
    pub total: f64,
}

/// Squared tracking errors against a reference frame. Keypoint terms are
/// means over keypoints; joint terms are full squared norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingErrors {
    pub keypoint_sq: f64,
    pub joint_pos_sq: f64,
    pub joint_vel_sq: f64,
    pub linear_vel_sq: f64,
}

pub fn tracking_errors(model: &RobotModel, state: &SimState, clip: &MotionClip, frame: usize) -> TrackingErrors {
    let r = clip.frame(frame);
    let kp = state.keypoints(model);
    let kv = state.keypoint_velocities(model);
    let rv = clip.keypoint_velocities(frame);
    let nk = kp.len() as f64;
    TrackingErrors {
        keypoint_sq: kp.iter().zip(&r.keypoints).map(|(a, b)| norm(sub(*a, *b)).powi(2)).sum::<f64>() / nk,
        joint_pos_sq: state.q.iter().zip(&r.q).map(|(a, b)| (a - b).powi(2)).sum(),
        joint_vel_sq: state.qdot.iter().zip(&r.qdot).map(|(a, b)| (a - b).powi(2)).sum(),
        linear_vel_sq: kv.iter().zip(&rv).map(|(a, b)| norm(sub(*a, *b)).powi(2)).sum::<f64>() / nk,
    }
}

/// Reward from tracking errors and step diagnostics.
pub fn reward_from_errors(
    errors: &TrackingErrors,
    action: &[f64],
    prev_action: &[f64],
    info: &StepInfo,
    weights: &RewardWeights,
    progress: f64,
) -> RewardBreakdown {
    let kernel = |e2: f64, s: f64| (-e2 / (s * s)).exp();
    let c = weights.curriculum.multiplier(progress);
    let rate = action.iter().zip(prev_action).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut r = RewardBreakdown {
        keypoint: weights.w_kp * kernel(errors.keypoint_sq, weights.sigma_kp),
        joint_pos: weights.w_jpos * kernel(errors.joint_pos_sq, weights.sigma_jpos),
        joint_vel: weights.w_jvel * kernel(errors.joint_vel_sq, weights.sigma_jvel),
        linear_vel: weights.w_linvel * kernel(errors.linear_vel_sq, weights.sigma_linvel),
        action_rate: -c * weights.w_action_rate * rate,
        torque: -c * weights.w_torque * info.torque_abs_sum,
        slip: -c * weights.w_slip * info.foot_slip,
        total: 0.0,
    };
    r.total = r.keypoint + r.joint_pos + r.joint_vel + r.linear_vel + r.action_rate + r.torque + r.slip;
    r
}

/// Reward for the transition `before → after` under `action`, scored against
/// clip frame `frame` (the frame `after` should match).
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    model: &RobotModel,
    before: &SimState,
    after: &SimState,
    action: &[f64],
    clip: &MotionClip,
    frame: usize,
    info: &StepInfo,
    weights: &RewardWeights,
    progress: f64,
) -> RewardBreakdown {
    let e = tracking_errors(model, after, clip, frame);
    reward_from_errors(&e, action, &before.prev_action, info, weights, progress)
}
