//! Kinematic feasibility filter for reference clips.

use serde::{Deserialize, Serialize};

use super::clip::MotionClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationPolicy {
    pub min_frames: usize,
    /// rad/s, from first differences of joint positions.
    pub max_joint_vel: f64,
    /// rad/s², from second differences of joint positions.
    pub max_joint_acc: f64,
    /// m/s, from first differences of the root position.
    pub max_root_speed: f64,
}

impl Default for CurationPolicy {
    fn default() -> Self {
        CurationPolicy { min_frames: 10, max_joint_vel: 10.0, max_joint_acc: 200.0, max_root_speed: 3.0 }
    }
}

impl CurationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames == 0 || !(self.max_joint_vel > 0.0) || !(self.max_joint_acc > 0.0) || !(self.max_root_speed > 0.0) {
            return Err(Error::Config("curation thresholds must all be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionRule {
    MinFrames,
    MaxJointVel,
    MaxJointAcc,
    MaxRootSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub clip: String,
    pub rule: RejectionRule,
    /// Offending measured value and the threshold it exceeded.
    pub value: f64,
    pub threshold: f64,
}

fn peak_joint_velocity(clip: &MotionClip) -> f64 {
    clip.frames
        .windows(2)
        .flat_map(|w| w[0].q.iter().zip(&w[1].q).map(|(a, b)| (b - a).abs() * clip.fps))
        .fold(0.0, f64::max)
}

fn peak_joint_acceleration(clip: &MotionClip) -> f64 {
    clip.frames
        .windows(3)
        .flat_map(|w| {
            (0..w[0].q.len()).map(move |j| (w[2].q[j] - 2.0 * w[1].q[j] + w[0].q[j]).abs())
        })
        .fold(0.0, f64::max)
        * clip.fps
        * clip.fps
}

fn peak_root_speed(clip: &MotionClip) -> f64 {
    clip.frames
        .windows(2)
        .map(|w| {
            let d = [w[1].root_pos[0] - w[0].root_pos[0], w[1].root_pos[1] - w[0].root_pos[1]];
            d[0].hypot(d[1]) * clip.fps
        })
        .fold(0.0, f64::max)
}

/// First rule a clip violates, if any. Rules are checked in the order
/// min_frames, joint velocity, joint acceleration, root speed.
pub fn first_violation(clip: &MotionClip, policy: &CurationPolicy) -> Option<Rejection> {
    let reject = |rule, value: f64, threshold: f64| Rejection { clip: clip.name.clone(), rule, value, threshold };
    if clip.len() < policy.min_frames {
        return Some(reject(RejectionRule::MinFrames, clip.len() as f64, policy.min_frames as f64));
    }
    let v = peak_joint_velocity(clip);
    if v > policy.max_joint_vel {
        return Some(reject(RejectionRule::MaxJointVel, v, policy.max_joint_vel));
    }
    let a = peak_joint_acceleration(clip);
    if a > policy.max_joint_acc {
        return Some(reject(RejectionRule::MaxJointAcc, a, policy.max_joint_acc));
    }
    let s = peak_root_speed(clip);
    if s > policy.max_root_speed {
        return Some(reject(RejectionRule::MaxRootSpeed, s, policy.max_root_speed));
    }
    None
}

/// Split `clips` into those passing every threshold and a rejection report.
pub fn curate(clips: Vec<MotionClip>, policy: &CurationPolicy) -> (Vec<MotionClip>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for clip in clips {
        match first_violation(&clip, policy) {
            None => kept.push(clip),
            Some(r) => rejected.push(r),
        }
    }
    (kept, rejected)
}

/// Rejection report as JSON lines, one record per rejected clip.
pub fn report_to_text(report: &[Rejection]) -> String {
    report
        .iter()
        .map(|r| serde_json::to_string(r).expect("rejection serializes") + "\n")
        .collect()
}
