//! Deployable observation: a zero-padded history of sensor-available
//! proprioception plus a window of upcoming reference frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::Proprio;
use crate::motiondata::MotionClip;
use crate::simulator::kinematics::{rotate_into, sub, wrap_angle};
use crate::simulator::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployObsConfig {
    /// Proprioceptive history length H.
    pub history: usize,
    /// Future reference window W.
    pub window: usize,
}

impl Default for DeployObsConfig {
    fn default() -> Self {
        DeployObsConfig { history: 25, window: 5 }
    }
}

impl DeployObsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.window == 0 {
            return Err(Error::Config("history and window must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-step proprioception width.
    pub fn step_dim(model: &RobotModel) -> usize {
        Proprio::dim(model.n_joints())
    }

    /// Per-future-frame goal width: height, heading error, root velocity (2),
    /// angular-velocity error, and non-root keypoint offsets.
    pub fn frame_goal_dim(model: &RobotModel) -> usize {
        5 + 2 * (model.n_keypoints() - 1)
    }

    pub fn proprio_dim(&self, model: &RobotModel) -> usize {
        self.history * Self::step_dim(model)
    }

    pub fn goal_dim(&self, model: &RobotModel) -> usize {
        self.window * Self::frame_goal_dim(model)
    }

    pub fn dim(&self, model: &RobotModel) -> usize {
        self.proprio_dim(model) + self.goal_dim(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployObs {
    /// H stacked steps, oldest first, zero-padded before the episode start.
    pub proprio_history: Vec<f64>,
    /// W future frames, clamped to the last clip frame.
    pub goal: Vec<f64>,
}

impl DeployObs {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.proprio_history.clone();
        v.extend_from_slice(&self.goal);
        v
    }
}

/// Root orientation recovered from the measured gravity direction
/// `(−sin φ, −cos φ)`.
pub fn angle_from_gravity(g: [f64; 2]) -> f64 {
    (-g[0]).atan2(-g[1])
}

/// Build the deployable observation from the proprioception history (oldest
/// first, last entry current) at reference frame `frame`.
pub fn build_deploy_obs(
    model: &RobotModel,
    history: &[Proprio],
    clip: &MotionClip,
    frame: usize,
    cfg: &DeployObsConfig,
) -> Result<DeployObs> {
    let current = history.last().ok_or_else(|| Error::invalid("deploy observation needs a current step"))?;
    if clip.is_empty() {
        return Err(Error::InvalidClip(format!("{}: empty clip", clip.name)));
    }
    let step = DeployObsConfig::step_dim(model);
    let mut proprio_history = vec![0.0; cfg.history * step];
    let take = history.len().min(cfg.history);
    for (slot, p) in history[history.len() - take..].iter().enumerate() {
        let v = p.to_vec();
        if v.len() != step {
            return Err(Error::DimensionMismatch { expected: step, got: v.len(), context: "proprio step" });
        }
        let at = (cfg.history - take + slot) * step;
        proprio_history[at..at + step].copy_from_slice(&v);
    }

    let phi = angle_from_gravity(current.gravity);
    let last = clip.len() - 1;
    let mut goal = Vec::with_capacity(cfg.goal_dim(model));
    for k in 1..=cfg.window {
        let f = clip.frame((frame + k).min(last));
        goal.push(f.root_pos[1]);
        goal.push(wrap_angle(f.root_angle - phi));
        goal.extend(rotate_into(f.root_linvel, phi));
        goal.push(f.root_angvel - current.angvel);
        for p in &f.keypoints[1..] {
            goal.extend(rotate_into(sub(*p, f.root_pos), f.root_angle));
        }
    }
    Ok(DeployObs { proprio_history, goal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{generate_clip, ClipKind, ClipParams};
    use crate::rng::seeded;
    use crate::simulator::state_from_frame;

    fn setup() -> (RobotModel, MotionClip) {
        let m = RobotModel::planar_biped();
        let c = generate_clip(&m, ClipKind::Walk, &ClipParams::default(), 50.0, 2.0, &mut seeded(0)).unwrap();
        (m, c)
    }

    #[test]
    fn dims() {
        let (m, _) = setup();
        let cfg = DeployObsConfig::default();
        assert_eq!(DeployObsConfig::step_dim(&m), 24);
        assert_eq!(DeployObsConfig::frame_goal_dim(&m), 19);
        assert_eq!(cfg.dim(&m), 25 * 24 + 5 * 19);
    }

    #[test]
    fn first_step_is_zero_padded() {
        let (m, c) = setup();
        let cfg = DeployObsConfig::default();
        let p = Proprio::from_state(&state_from_frame(&c, 0));
        let o = build_deploy_obs(&m, &[p.clone()], &c, 0, &cfg).unwrap();
        assert_eq!(o.proprio_history.len(), 25 * 24);
        assert!(o.proprio_history[..24 * 24].iter().all(|&v| v == 0.0));
        assert_eq!(&o.proprio_history[24 * 24..], p.to_vec().as_slice());
    }

    #[test]
    fn window_clamps_to_last_frame() {
        let (m, c) = setup();
        let cfg = DeployObsConfig { history: 2, window: 5 };
        let f = c.len() - 2;
        let p = Proprio::from_state(&state_from_frame(&c, f));
        let o = build_deploy_obs(&m, &[p], &c, f, &cfg).unwrap();
        let g = DeployObsConfig::frame_goal_dim(&m);
        for k in 1..5 {
            assert_eq!(o.goal[k * g..(k + 1) * g], o.goal[..g]);
        }
    }

    #[test]
    fn on_reference_heading_error_is_zero() {
        let (m, c) = setup();
        let cfg = DeployObsConfig { history: 3, window: 1 };
        let s = state_from_frame(&c, 10);
        let o = build_deploy_obs(&m, &[Proprio::from_state(&s)], &c, 10, &cfg).unwrap();
        let next = c.frame(11);
        assert!((o.goal[1] - wrap_angle(next.root_angle - s.root_angle)).abs() < 1e-12);
        assert_eq!(o.goal[0], next.root_pos[1]);
    }

    proptest::proptest! {
        #[test]
        fn global_translation_leaves_obs_unchanged(dx in -50.0f64..50.0, frame in 0usize..90) {
            let (m, c) = setup();
            let cfg = DeployObsConfig { history: 4, window: 3 };
            let mut shifted = c.clone();
            for f in &mut shifted.frames {
                f.root_pos[0] += dx;
                for k in &mut f.keypoints {
                    k[0] += dx;
                }
            }
            let hist: Vec<Proprio> = (0..=frame).map(|i| Proprio::from_state(&state_from_frame(&c, i))).collect();
            let a = build_deploy_obs(&m, &hist, &c, frame, &cfg).unwrap();
            let b = build_deploy_obs(&m, &hist, &shifted, frame, &cfg).unwrap();
            for (x, y) in a.goal.iter().zip(&b.goal) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
            proptest::prop_assert_eq!(a.proprio_history, b.proprio_history);
        }
    }
}
