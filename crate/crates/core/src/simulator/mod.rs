//! Planar floating-base articulated robot simulator.
//!
//! Dynamics use the composite rigid body algorithm for the mass matrix and
//! recursive Newton-Euler for bias forces; contact is a penalty spring-damper
//! with Coulomb friction at link endpoints. Instances share no state, so any
//! number of them may be stepped from different threads.

pub mod dynamics;
pub mod integrate;
pub mod kinematics;
pub mod model;
pub mod randomize;
pub mod termination;

use rand::Rng as _;

pub use integrate::{control_step, pd_torque, step, step_detailed, SimConfig, SimState, StepInfo};
pub use kinematics::{forward_kinematics, Vec2};
pub use model::{BaseMode, RobotModel};
pub use randomize::{randomize, Interval, Perturbations, RandomizationMode, RandomizationSpec};
pub use termination::{check_termination, Termination};

use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::rng::Rng;

/// Robot state copied from clip frame `frame`: root pose and velocities,
/// joint positions and velocities. The previous action is the frame's joint
/// positions.
pub fn state_from_frame(clip: &MotionClip, frame: usize) -> SimState {
    let f = clip.frame(frame);
    SimState {
        root_pos: f.root_pos,
        root_angle: f.root_angle,
        root_linvel: f.root_linvel,
        root_angvel: f.root_angvel,
        q: f.q.clone(),
        qdot: f.qdot.clone(),
        prev_action: f.q.clone(),
        time: frame as f64 / clip.fps,
        rng_stream: 0,
    }
}

/// Reference state initialization: a start frame drawn uniformly from
/// `[0, len − 2]` so at least one successor frame remains to track.
pub fn reference_state_init(clip: &MotionClip, rng: &mut Rng) -> Result<(usize, SimState)> {
    if clip.len() < 2 {
        return Err(Error::InvalidClip(format!(
            "{}: reference state initialization needs >= 2 frames, got {}",
            clip.name,
            clip.len()
        )));
    }
    let frame = rng.random_range(0..clip.len() - 1);
    Ok((frame, state_from_frame(clip, frame)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{generate_clip, ClipKind, ClipParams};
    use crate::rng::seeded;

    fn clip(frames: usize) -> MotionClip {
        let m = RobotModel::planar_biped();
        let mut c = generate_clip(&m, ClipKind::Squat, &ClipParams::default(), 50.0, 2.0, &mut seeded(0)).unwrap();
        c.frames.truncate(frames);
        c
    }

    #[test]
    fn two_frame_clip_always_starts_at_zero() {
        let c = clip(2);
        let mut rng = seeded(4);
        for _ in 0..50 {
            let (i, s) = reference_state_init(&c, &mut rng).unwrap();
            assert_eq!(i, 0);
            assert_eq!(s, state_from_frame(&c, 0));
            assert_eq!(s.q, c.frames[0].q);
            assert_eq!(s.root_linvel, c.frames[0].root_linvel);
        }
    }

    #[test]
    fn single_frame_clip_is_rejected() {
        let c = clip(1);
        assert!(matches!(reference_state_init(&c, &mut seeded(0)), Err(Error::InvalidClip(_))));
    }

    #[test]
    fn start_frames_are_uniform() {
        let c = clip(100);
        let mut rng = seeded(21);
        let bins = c.len() - 1;
        let mut counts = vec![0usize; bins];
        let n = 10_000;
        for _ in 0..n {
            counts[reference_state_init(&c, &mut rng).unwrap().0] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // χ²(98) upper 1% quantile.
        assert!(chi2 < 133.48, "chi2 = {chi2}");
    }
}
