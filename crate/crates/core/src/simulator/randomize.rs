//! Domain randomization, split into asset properties (per-episode model
//! parameters) and environment dynamics (gains, torque noise, pushes).

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Uniform};
use serde::{Deserialize, Serialize};

use super::model::RobotModel;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationMode {
    None,
    AssetOnly,
    AssetAndDynamics,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Degenerate intervals return their endpoint exactly.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        Uniform::new_inclusive(self.lo, self.hi).expect("valid interval").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationSpec {
    pub mode: RandomizationMode,
    pub friction_range: Interval,
    /// Multiplicative scale on each link mass.
    pub mass_scale_range: Interval,
    /// Additive shift (m) of each link's centre of mass along its axis.
    pub com_offset_range: Interval,
    /// Multiplicative scale on PD gains (dynamics only).
    pub pd_scale_range: Interval,
    /// Std of additive Gaussian joint-torque noise (N·m, dynamics only).
    pub torque_noise_std: f64,
    /// Mean time between pushes (s, dynamics only); 0 disables pushes.
    pub push_interval_s: f64,
    /// Magnitude of the instantaneous root velocity change (m/s).
    pub push_magnitude_range: Interval,
    /// Pushes are scheduled up to this episode time.
    pub schedule_horizon_s: f64,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        RandomizationSpec {
            mode: RandomizationMode::AssetOnly,
            friction_range: Interval::new(0.7, 1.2),
            mass_scale_range: Interval::new(0.9, 1.1),
            com_offset_range: Interval::new(-0.02, 0.02),
            pd_scale_range: Interval::new(0.9, 1.1),
            torque_noise_std: 1.0,
            push_interval_s: 3.0,
            push_magnitude_range: Interval::new(0.0, 0.2),
            schedule_horizon_s: 30.0,
        }
    }
}

impl RandomizationSpec {
    pub fn none() -> Self {
        RandomizationSpec { mode: RandomizationMode::None, ..Default::default() }
    }

    pub fn with_mode(mode: RandomizationMode) -> Self {
        RandomizationSpec { mode, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("friction_range", self.friction_range),
            ("mass_scale_range", self.mass_scale_range),
            ("com_offset_range", self.com_offset_range),
            ("pd_scale_range", self.pd_scale_range),
            ("push_magnitude_range", self.push_magnitude_range),
        ] {
            if !(iv.lo <= iv.hi) {
                return Err(Error::Config(format!("{name}: lo must be <= hi")));
            }
        }
        if self.friction_range.lo < 0.0 || self.mass_scale_range.lo <= 0.0 || self.pd_scale_range.lo < 0.0 {
            return Err(Error::Config("friction, mass and gain scales must be non-negative".into()));
        }
        if !(self.torque_noise_std >= 0.0) || !(self.push_interval_s >= 0.0) {
            return Err(Error::Config("noise std and push interval must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Push {
    pub time: f64,
    pub delta_v: [f64; 2],
}

/// Per-episode environment perturbations. Empty unless the dynamics class
/// is enabled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbations {
    pub torque_noise_std: f64,
    pub pushes: Vec<Push>,
}

impl Perturbations {
    pub fn is_empty(&self) -> bool {
        self.torque_noise_std == 0.0 && self.pushes.is_empty()
    }

    /// Pushes with `from <= time < to`.
    pub fn pushes_between(&self, from: f64, to: f64) -> impl Iterator<Item = &Push> {
        self.pushes.iter().filter(move |p| p.time >= from && p.time < to)
    }
}

/// Sample a randomized copy of `model` and, in dynamics mode, an episode
/// perturbation schedule. Mode `None` returns an exact clone.
pub fn randomize(model: &RobotModel, spec: &RandomizationSpec, rng: &mut Rng) -> (RobotModel, Perturbations) {
    let mut out = model.clone();
    if spec.mode == RandomizationMode::None {
        return (out, Perturbations::default());
    }
    out.friction_coeff = spec.friction_range.sample(rng);
    for i in 0..out.n_links() {
        out.link_masses[i] = model.link_masses[i] * spec.mass_scale_range.sample(rng);
        out.link_coms[i] = model.link_coms[i] + spec.com_offset_range.sample(rng);
    }
    if spec.mode == RandomizationMode::AssetOnly {
        return (out, Perturbations::default());
    }

    for j in 0..out.n_joints() {
        let s = spec.pd_scale_range.sample(rng);
        out.pd_kp[j] = model.pd_kp[j] * s;
        out.pd_kd[j] = model.pd_kd[j] * s;
    }
    let mut pushes = Vec::new();
    if spec.push_interval_s > 0.0 {
        let gap = Exp::new(1.0 / spec.push_interval_s).expect("positive rate");
        let mut t = gap.sample(rng);
        while t < spec.schedule_horizon_s {
            let mag = spec.push_magnitude_range.sample(rng);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            pushes.push(Push { time: t, delta_v: [mag * dir.cos(), mag * dir.sin()] });
            t += gap.sample(rng);
        }
    }
    (out, Perturbations { torque_noise_std: spec.torque_noise_std, pushes })
}
