//! Early-termination checks.

use serde::{Deserialize, Serialize};

use super::integrate::SimState;
use super::kinematics::{norm, sub, Vec2};
use super::model::RobotModel;

/// Lateral projected-gravity magnitude above which the robot has fallen.
pub const ORIENTATION_LIMIT: f64 = 0.8;
/// Mean keypoint distance (m) above which tracking is lost.
pub const TRACKING_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Alive,
    FellOrientation,
    LostTracking,
}

impl Termination {
    pub fn is_alive(self) -> bool {
        self == Termination::Alive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Alive => "alive",
            Termination::FellOrientation => "fell_orientation",
            Termination::LostTracking => "lost_tracking",
        }
    }
}

/// Gravity direction `(−sin φ, −cos φ)` seen from the root frame.
pub fn projected_gravity(root_angle: f64) -> Vec2 {
    [-root_angle.sin(), -root_angle.cos()]
}

pub fn mean_keypoint_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| norm(sub(*x, *y))).sum::<f64>() / a.len() as f64
}

/// Orientation is checked before tracking, so a state that violates both
/// reports [`Termination::FellOrientation`].
pub fn check_termination(model: &RobotModel, state: &SimState, ref_keypoints: &[Vec2]) -> Termination {
    if projected_gravity(state.root_angle)[0].abs() > ORIENTATION_LIMIT {
        return Termination::FellOrientation;
    }
    let kp = state.keypoints(model);
    if mean_keypoint_distance(&kp, ref_keypoints) > TRACKING_LIMIT {
        return Termination::LostTracking;
    }
    Termination::Alive
}
