//! One simulated tracking episode: a (possibly randomized) robot following a
//! reference clip, with pushes and torque noise when dynamics randomization
//! is on.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::motiondata::MotionClip;
use crate::rng::Rng;
use crate::simulator::{
    check_termination, control_step, randomize, reference_state_init, state_from_frame, Perturbations,
    RandomizationSpec, RobotModel, SimConfig, SimState, StepInfo, Termination,
};

#[derive(Debug, Clone)]
pub struct TrackingEnv {
    pub model: RobotModel,
    pub perturbations: Perturbations,
    pub clip: usize,
    /// Reference frame the current state corresponds to.
    pub frame: usize,
    pub state: SimState,
    /// Seconds since the episode started.
    pub elapsed: f64,
    pub steps: usize,
    pub rng: Rng,
}

/// Outcome of one control step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub before: SimState,
    pub info: StepInfo,
    pub termination: Termination,
    /// The reference has no further frame to track.
    pub clip_end: bool,
    /// The simulator produced a non-finite state; counts as a fall.
    pub diverged: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.clip_end || !self.termination.is_alive()
    }
}

impl TrackingEnv {
    /// A fresh episode on clip `clip` starting at `frame` (or a uniformly
    /// drawn frame when `None`), with a freshly randomized robot.
    pub fn reset(
        nominal: &RobotModel,
        clips: &[MotionClip],
        clip: usize,
        frame: Option<usize>,
        spec: &RandomizationSpec,
        mut rng: Rng,
    ) -> Result<Self> {
        let (model, perturbations) = randomize(nominal, spec, &mut rng);
        let (frame, state) = match frame {
            Some(f) => (f, state_from_frame(&clips[clip], f)),
            None => reference_state_init(&clips[clip], &mut rng)?,
        };
        Ok(TrackingEnv { model, perturbations, clip, frame, state, elapsed: 0.0, steps: 0, rng })
    }

    pub fn step(&mut self, action: &[f64], clips: &[MotionClip], sim: &SimConfig) -> Result<EnvStep> {
        let clip = &clips[self.clip];
        let before = self.state.clone();
        let mut state = self.state.clone();
        let dt = sim.control_dt();
        for push in self.perturbations.pushes_between(self.elapsed, self.elapsed + dt) {
            state.root_linvel[0] += push.delta_v[0];
            state.root_linvel[1] += push.delta_v[1];
        }
        let noise: Option<Vec<f64>> = (self.perturbations.torque_noise_std > 0.0).then(|| {
            (0..self.model.n_joints())
                .map(|_| self.perturbations.torque_noise_std * self.rng.sample::<f64, _>(StandardNormal))
                .collect()
        });
        self.frame = (self.frame + 1).min(clip.len() - 1);
        self.elapsed += dt;
        self.steps += 1;
        match control_step(&self.model, &state, action, sim, noise.as_deref()) {
            Ok((next, info)) => {
                let termination = check_termination(&self.model, &next, &clip.frames[self.frame].keypoints);
                self.state = next;
                Ok(EnvStep { before, info, termination, clip_end: self.frame + 1 >= clip.len(), diverged: false })
            }
            Err(crate::Error::SimulationDiverged { .. }) => Ok(EnvStep {
                before,
                info: StepInfo { torque: vec![0.0; self.model.n_joints()], ..Default::default() },
                termination: Termination::FellOrientation,
                clip_end: false,
                diverged: true,
            }),
            Err(e) => Err(e),
        }
    }
}
