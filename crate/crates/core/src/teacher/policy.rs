//! Teacher actor-critic. The actor outputs a Gaussian over a residual that is
//! added, scaled, to the next reference joint positions; the critic predicts
//! returns in units of `value_scale`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::obs::{build_oracle_obs, OracleObs};
use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::neural::{load_json, save_json, Activation, Init, Mlp, MlpSpec, RunningNorm};
use crate::simulator::{RobotModel, SimState};
use crate::student::obs::{build_deploy_obs, DeployObsConfig};
use crate::evaluate::Proprio;

pub const TEACHER_FORMAT_VERSION: u32 = 1;

/// What the PPO policy observes: the privileged oracle state (the teacher),
/// or the deployable observation (the train-from-scratch baseline).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationKind {
    #[default]
    Oracle,
    Deployable(DeployObsConfig),
}

impl ObservationKind {
    pub fn dim(&self, model: &RobotModel) -> usize {
        match self {
            ObservationKind::Oracle => OracleObs::dim(model),
            ObservationKind::Deployable(cfg) => cfg.dim(model),
        }
    }

    /// Raw observation; `history` is the proprioception so far, oldest first.
    pub fn build(
        &self,
        model: &RobotModel,
        state: &SimState,
        history: &[Proprio],
        clip: &MotionClip,
        frame: usize,
    ) -> Result<Vec<f64>> {
        match self {
            ObservationKind::Oracle => Ok(build_oracle_obs(model, state, clip, frame)?.to_vec()),
            ObservationKind::Deployable(cfg) => Ok(build_deploy_obs(model, history, clip, frame, cfg)?.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherPolicy {
    pub format_version: u32,
    #[serde(default)]
    pub observation: ObservationKind,
    pub actor: Mlp,
    pub critic: Mlp,
    /// State-independent log standard deviation of the residual.
    pub log_std: Vec<f64>,
    pub obs_norm: RunningNorm,
    /// Radians per unit of residual.
    pub action_scale: f64,
    pub value_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherNetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_std: f64,
    pub action_scale: f64,
}

impl Default for TeacherNetConfig {
    fn default() -> Self {
        TeacherNetConfig { hidden: vec![256, 256], activation: Activation::Elu, init_log_std: -1.0, action_scale: 0.25 }
    }
}

impl TeacherPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: &TeacherNetConfig, value_scale: f64, seed: u64) -> Result<Self> {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend(&cfg.hidden);
            s.push(out);
            s
        };
        let actor = Mlp::new(MlpSpec::new(sizes(act_dim), cfg.activation, Init::Orthogonal, seed).with_output_gain(0.01))?;
        let critic = Mlp::new(MlpSpec::new(sizes(1), cfg.activation, Init::Orthogonal, seed ^ 0x5eed).with_output_gain(1.0))?;
        if !(cfg.action_scale > 0.0) || !(value_scale > 0.0) {
            return Err(Error::Config("action and value scales must be > 0".into()));
        }
        Ok(TeacherPolicy {
            format_version: TEACHER_FORMAT_VERSION,
            observation: ObservationKind::Oracle,
            actor,
            critic,
            log_std: vec![crate::neural::gaussian::clamp_log_std(cfg.init_log_std); act_dim],
            obs_norm: RunningNorm::new(obs_dim),
            action_scale: cfg.action_scale,
            value_scale,
        })
    }

    pub fn for_robot(model: &RobotModel, cfg: &TeacherNetConfig, value_scale: f64, seed: u64) -> Result<Self> {
        Self::with_observation(model, ObservationKind::Oracle, cfg, value_scale, seed)
    }

    pub fn with_observation(
        model: &RobotModel,
        observation: ObservationKind,
        cfg: &TeacherNetConfig,
        value_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self::new(observation.dim(model), model.n_joints(), cfg, value_scale, seed)?;
        p.observation = observation;
        Ok(p)
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Joint targets for a residual: `q̂_{t+1} + scale · residual`.
    pub fn targets(&self, residual: &[f64], reference_next_q: &[f64]) -> Vec<f64> {
        reference_next_q.iter().zip(residual).map(|(q, r)| q + self.action_scale * r).collect()
    }

    /// Deterministic joint targets (residual mean) for a state.
    pub fn act_mean(&self, model: &RobotModel, state: &SimState, clip: &MotionClip, frame: usize) -> Result<Vec<f64>> {
        let obs = build_oracle_obs(model, state, clip, frame)?.to_vec();
        self.act_mean_from_obs(&obs, clip, frame)
    }

    /// Deterministic joint targets for a raw observation of this policy's kind.
    pub fn act_mean_from_obs(&self, raw_obs: &[f64], clip: &MotionClip, frame: usize) -> Result<Vec<f64>> {
        if frame + 1 >= clip.len() {
            return Err(Error::invalid("no reference frame left to track"));
        }
        let mean = self.actor.forward(&self.obs_norm.normalize(raw_obs))?;
        Ok(self.targets(&mean, &clip.frames[frame + 1].q))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: TeacherPolicy = load_json(path)?;
        if p.format_version != TEACHER_FORMAT_VERSION {
            return Err(Error::FormatVersion { found: p.format_version, expected: TEACHER_FORMAT_VERSION });
        }
        Ok(p)
    }
}
