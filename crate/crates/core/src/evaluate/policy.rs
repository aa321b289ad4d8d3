//! The interface every evaluated controller implements, plus the observation
//! noise model.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::rng::Rng;
use crate::simulator::termination::projected_gravity;
use crate::simulator::{RobotModel, SimState, Vec2};

/// Sensor-available proprioception at one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proprio {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub angvel: f64,
    /// Gravity direction in the root frame.
    pub gravity: Vec2,
    pub prev_action: Vec<f64>,
}

impl Proprio {
    pub const fn dim(n_joints: usize) -> usize {
        3 * n_joints + 3
    }

    pub fn from_state(state: &SimState) -> Self {
        Proprio {
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            angvel: state.root_angvel,
            gravity: projected_gravity(state.root_angle),
            prev_action: state.prev_action.clone(),
        }
    }

    /// `[q, q̇, ω, gravity, a_prev]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.q.len()));
        v.extend(&self.q);
        v.extend(&self.qdot);
        v.push(self.angvel);
        v.extend(self.gravity);
        v.extend(&self.prev_action);
        v
    }
}

/// What a controller sees at one control step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub model: &'a RobotModel,
    /// Simulator state with observation noise applied to joint positions,
    /// joint velocities and root angular velocity. Only oracle controllers
    /// may read it.
    pub state: &'a SimState,
    /// Noisy proprioception, oldest first; the last entry is the current step.
    pub history: &'a [Proprio],
    pub clip: &'a MotionClip,
    /// Reference frame matching the current state.
    pub frame: usize,
}

/// A controller mapping observations to joint position targets.
pub trait Policy {
    fn id(&self) -> String;
    fn act(&self, input: &PolicyInput<'_>, rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Additive Gaussian observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: u8,
    pub q_std: f64,
    pub qdot_std: f64,
    pub angvel_std: f64,
    pub gravity_std: f64,
}

impl NoiseSpec {
    pub const LEVEL1: NoiseSpec = NoiseSpec { level: 1, q_std: 0.01, qdot_std: 0.1, angvel_std: 0.05, gravity_std: 0.02 };

    /// Level 0 is noise-free; level k scales the level-1 stds by k.
    pub fn level(level: u8) -> Result<Self> {
        if level > 2 {
            return Err(Error::Config(format!("noise level must be 0, 1 or 2, got {level}")));
        }
        let k = level as f64;
        let b = Self::LEVEL1;
        Ok(NoiseSpec {
            level,
            q_std: k * b.q_std,
            qdot_std: k * b.qdot_std,
            angvel_std: k * b.angvel_std,
            gravity_std: k * b.gravity_std,
        })
    }

    pub fn none() -> Self {
        Self::level(0).expect("level 0 exists")
    }

    pub fn stds(&self) -> [f64; 4] {
        [self.q_std, self.qdot_std, self.angvel_std, self.gravity_std]
    }
}

/// Draws one noise sample per channel per step. The standard-normal draws
/// do not depend on the level, so the same seed yields the same underlying
/// noise at every level (common random numbers).
pub fn apply_noise(state: &SimState, noise: &NoiseSpec, rng: &mut Rng) -> (SimState, Proprio) {
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    let mut s = state.clone();
    for q in &mut s.q {
        *q += noise.q_std * n();
    }
    for v in &mut s.qdot {
        *v += noise.qdot_std * n();
    }
    s.root_angvel += noise.angvel_std * n();
    let mut p = Proprio::from_state(&s);
    for g in &mut p.gravity {
        *g += noise.gravity_std * n();
    }
    (s, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn levels_are_ordered() {
        let l: Vec<[f64; 4]> = (0..=2).map(|k| NoiseSpec::level(k).unwrap().stds()).collect();
        assert_eq!(l[0], [0.0; 4]);
        for k in 0..2 {
            assert!(l[k].iter().zip(&l[k + 1]).all(|(a, b)| a <= b));
        }
        assert!(NoiseSpec::level(3).is_err());
    }

    #[test]
    fn level_zero_is_exact() {
        let m = RobotModel::planar_biped();
        let (root, ang, q) = m.standing_pose();
        let s = SimState::at_rest(root, ang, q);
        let (ns, p) = apply_noise(&s, &NoiseSpec::none(), &mut seeded(1));
        assert_eq!(ns, s);
        assert_eq!(p, Proprio::from_state(&s));
    }

    #[test]
    fn empirical_noise_std_matches_spec() {
        let m = RobotModel::planar_biped();
        let (root, ang, q) = m.standing_pose();
        let s = SimState::at_rest(root, ang, q);
        let clean = Proprio::from_state(&s);
        for level in [1, 2] {
            let spec = NoiseSpec::level(level).unwrap();
            let mut rng = seeded(level as u64);
            let mut sums = [0.0f64; 4];
            let mut counts = [0.0f64; 4];
            for _ in 0..10_000 {
                let (_, p) = apply_noise(&s, &spec, &mut rng);
                for j in 0..7 {
                    sums[0] += (p.q[j] - clean.q[j]).powi(2);
                    sums[1] += (p.qdot[j] - clean.qdot[j]).powi(2);
                }
                counts[0] += 7.0;
                counts[1] += 7.0;
                sums[2] += (p.angvel - clean.angvel).powi(2);
                counts[2] += 1.0;
                for k in 0..2 {
                    sums[3] += (p.gravity[k] - clean.gravity[k]).powi(2);
                }
                counts[3] += 2.0;
            }
            for c in 0..4 {
                let sd = (sums[c] / counts[c]).sqrt();
                let want = spec.stds()[c];
                assert!((sd / want - 1.0).abs() < 0.05, "level {level} channel {c}: {sd} vs {want}");
            }
        }
    }
}
