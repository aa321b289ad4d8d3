//! Synthetic reference clips for the planar biped.
//!
//! Joint trajectories are smooth closed-form functions of time. Feet are kept
//! flat, and the root is placed so that the supporting foot rests on the
//! ground without sliding, which makes the clips kinematically consistent
//! with the simulator's contact model.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::clip::{ClipSource, MotionClip};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::simulator::kinematics::{LinkFrames, Vec2};
use crate::simulator::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Stand,
    Walk,
    Squat,
    Wave,
    Kick,
    /// Trunk pivots about the hips: the sagittal-plane stand-in for turning.
    Turn,
}

impl ClipKind {
    pub const ALL: [ClipKind; 6] =
        [ClipKind::Stand, ClipKind::Walk, ClipKind::Squat, ClipKind::Wave, ClipKind::Kick, ClipKind::Turn];

    pub fn as_str(self) -> &'static str {
        match self {
            ClipKind::Stand => "stand",
            ClipKind::Walk => "walk",
            ClipKind::Squat => "squat",
            ClipKind::Wave => "wave",
            ClipKind::Kick => "kick",
            ClipKind::Turn => "turn",
        }
    }
}

impl FromStr for ClipKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClipKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown clip kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipParams {
    /// Scales every joint excursion; 0 gives a static standing pose.
    pub amplitude: f64,
    /// Cycle period (s).
    pub period_s: f64,
    /// Uniform random phase offset in `[0, phase_jitter · 2π)`.
    pub phase_jitter: f64,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams { amplitude: 1.0, period_s: 2.0, phase_jitter: 0.0 }
    }
}

/// Joint order of the default biped.
const TORSO: usize = 0;
const HIP_L: usize = 1;
const KNEE_L: usize = 2;
const ANKLE_L: usize = 3;
const HIP_R: usize = 4;
const KNEE_R: usize = 5;
const ANKLE_R: usize = 6;

/// Smooth 0→1→0 bump over one period.
fn bump(phase: f64) -> f64 {
    0.5 * (1.0 - phase.cos())
}

/// Hip and knee angles for one leg of the walk at cycle position `u ∈ [0, 1)`.
///
/// The ankle follows a path in the hip frame: the first half of the cycle is
/// swing (forward with a lift), the second half stance (straight back at
/// constant height). The swing profile matches the stance speed at both ends,
/// so joint velocities are continuous. Angles come from two-link inverse
/// kinematics with the knee bending forward.
fn walk_leg(legs: [f64; 2], amp: f64, u: f64) -> (f64, f64) {
    let stride = 0.25 * amp;
    let lift = 0.06 * amp;
    let reach = legs[0] + legs[1];
    let height = reach - 0.02 * amp;
    let (x, z) = if u < 0.5 {
        let s = 2.0 * u;
        (-0.5 * stride + stride * (s - (TAU * s).sin() / PI), -height + lift * (PI * s).sin().powi(2))
    } else {
        let s = 2.0 * u - 1.0;
        (0.5 * stride - stride * s, -height)
    };
    let d = x.hypot(z).min(reach);
    let alpha = x.atan2(-z);
    // Interior geometry of the thigh/shank triangle.
    let (a, b) = (legs[0], legs[1]);
    let thigh_off = ((a * a + d * d - b * b) / (2.0 * a * d)).clamp(-1.0, 1.0).acos();
    let knee_in = ((a * a + b * b - d * d) / (2.0 * a * b)).clamp(-1.0, 1.0).acos();
    (alpha + thigh_off, -(PI - knee_in))
}

/// Foot angle relative to ground is `root + hip + knee + ankle`; zero keeps it
/// flat.
fn flat_ankle(root_angle: f64, hip: f64, knee: f64) -> f64 {
    -(root_angle + hip + knee)
}

fn pose(kind: ClipKind, legs: [f64; 2], amp: f64, phase: f64) -> (f64, Vec<f64>) {
    let mut q = vec![0.0; 7];
    let mut root_angle = 0.0;
    match kind {
        ClipKind::Stand => {}
        ClipKind::Squat => {
            let s = 0.6 * amp * bump(phase);
            q[TORSO] = -0.3 * s;
            for (h, k) in [(HIP_L, KNEE_L), (HIP_R, KNEE_R)] {
                q[h] = s;
                q[k] = -2.0 * s;
            }
        }
        ClipKind::Wave => {
            q[TORSO] = 0.35 * amp * phase.sin();
            q[HIP_L] = -0.05 * amp * phase.sin();
            q[HIP_R] = q[HIP_L];
        }
        ClipKind::Turn => {
            let b = 0.35 * amp * bump(phase);
            root_angle = -b;
            q[HIP_L] = b;
            q[HIP_R] = b;
            q[TORSO] = -0.3 * b;
        }
        ClipKind::Walk => {
            for (hip, knee, offset) in [(HIP_L, KNEE_L, 0.0), (HIP_R, KNEE_R, 0.5)] {
                let (h, k) = walk_leg(legs, amp, (phase / TAU + offset).rem_euclid(1.0));
                q[hip] = h;
                q[knee] = k;
            }
        }
        ClipKind::Kick => {
            // Kick with the left leg while standing on the right; the trunk
            // leans back a little to keep the centre of mass over the foot.
            let b = amp * bump(phase);
            let extend = amp * bump(phase).powi(2);
            q[HIP_L] = 0.9 * b;
            q[KNEE_L] = -0.9 * b + 0.6 * extend;
            q[TORSO] = 0.15 * b;
            q[HIP_R] = -0.05 * b;
        }
    }
    q[ANKLE_L] = flat_ankle(root_angle, q[HIP_L], q[KNEE_L]);
    q[ANKLE_R] = flat_ankle(root_angle, q[HIP_R], q[KNEE_R]);
    (root_angle, q)
}

/// Lowest contact height of each foot and its ankle position, with the root at
/// the origin.
fn feet_relative(model: &RobotModel, root_angle: f64, q: &[f64]) -> [(f64, Vec2); 2] {
    let frames = LinkFrames::compute(model, [0.0, 0.0], root_angle, q);
    let mut out = [(0.0, [0.0, 0.0]); 2];
    for (slot, &foot) in model.foot_links.iter().take(2).enumerate() {
        let low = frames.proximal(model, foot)[1].min(frames.distal(model, foot)[1]);
        out[slot] = (low, frames.origin[foot]);
    }
    out
}

/// Generate a clip of the given kind on the default biped topology.
pub fn generate_clip(
    model: &RobotModel,
    kind: ClipKind,
    params: &ClipParams,
    fps: f64,
    duration_s: f64,
    rng: &mut Rng,
) -> Result<MotionClip> {
    if model.n_joints() != 7 || model.foot_links.len() != 2 {
        return Err(Error::invalid("clip generators expect the 7-joint biped topology"));
    }
    if !(fps > 0.0) || !(duration_s * fps >= 2.0) {
        return Err(Error::InvalidClip(format!(
            "duration {duration_s} s at {fps} fps yields fewer than 2 frames"
        )));
    }
    if !(params.period_s > 0.0) {
        return Err(Error::invalid("period must be > 0"));
    }
    let n = (duration_s * fps + 1e-9).floor() as usize + 1;
    let offset = if params.phase_jitter > 0.0 { rng.random_range(0.0..params.phase_jitter) * TAU } else { 0.0 };
    let omega = TAU / params.period_s;
    // Walking starts mid-stance of the right leg so the first frame is a
    // balanced pose; other motions start from the neutral phase.
    let start = if kind == ClipKind::Walk { PI / 2.0 } else { 0.0 };
    let legs = [model.joint_offsets[KNEE_L], model.joint_offsets[ANKLE_L]];

    let mut roots = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(n);
    let mut qs = Vec::with_capacity(n);
    let mut root_x = 0.0;
    let mut prev: Option<(usize, [(f64, Vec2); 2])> = None;
    for t in 0..n {
        let phase = start + offset + omega * t as f64 / fps;
        let (root_angle, q) = pose(kind, legs, params.amplitude, phase);
        let feet = feet_relative(model, root_angle, &q);
        let stance = match kind {
            ClipKind::Kick => 1,
            _ if feet[0].0 < feet[1].0 => 0,
            _ => 1,
        };
        if let Some((_, prev_feet)) = prev {
            // Keep the stance ankle fixed in the world.
            root_x -= feet[stance].1[0] - prev_feet[stance].1[0];
        } else {
            root_x = -feet[stance].1[0];
        }
        roots.push([root_x, -feet[stance].0]);
        angles.push(root_angle);
        qs.push(q);
        prev = Some((stance, feet));
    }
    MotionClip::from_poses(model, kind.as_str(), fps, ClipSource::Synthetic, &roots, &angles, &qs)
}
