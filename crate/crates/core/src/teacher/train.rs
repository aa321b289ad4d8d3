//! Teacher training loop: parallel rollouts with reference state
//! initialization and early termination, then a PPO update.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::env::TrackingEnv;
use super::policy::{ObservationKind, TeacherNetConfig, TeacherPolicy};
use super::ppo::{gae, ppo_update, PpoBatch, PpoHyper, PpoOptimizer, PpoStats, RolloutBatch, StepEnd};
use super::reward::{reward_from_errors, tracking_errors, RewardWeights};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_suite, EvalConfig, NoiseSpec, Policy, PolicyInput, Proprio};
use crate::motiondata::MotionClip;
use crate::neural::mlp::batch;
use crate::neural::{gauss_log_prob, Mlp};
use crate::rng::{stream, Rng};
use crate::simulator::{RandomizationMode, RandomizationSpec, RobotModel, SimConfig};

const STREAM_EPISODE: u64 = 0x7e1;
const STREAM_ACTION: u64 = 0x7e2;
const STREAM_PPO: u64 = 0x7e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub seed: u64,
    pub iterations: usize,
    pub n_envs: usize,
    /// Control steps per environment per iteration.
    pub horizon: usize,
    /// Episodes longer than this are truncated with a value bootstrap; 0
    /// means episodes end only at the clip end or on termination.
    pub max_episode_steps: usize,
    pub net: TeacherNetConfig,
    /// Oracle for the teacher; deployable for the train-from-scratch baseline.
    #[serde(default)]
    pub observation: ObservationKind,
    pub ppo: PpoHyper,
    pub reward: RewardWeights,
    pub randomization: RandomizationSpec,
    pub sim: SimConfig,
    /// Evaluate the deterministic policy on every clip every this many
    /// iterations (and after the last); 0 disables.
    pub eval_every: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            seed: 0,
            iterations: 500,
            n_envs: 64,
            horizon: 32,
            max_episode_steps: 0,
            net: TeacherNetConfig::default(),
            observation: ObservationKind::Oracle,
            ppo: PpoHyper::default(),
            reward: RewardWeights::default(),
            randomization: RandomizationSpec::with_mode(RandomizationMode::AssetOnly),
            sim: SimConfig::default(),
            eval_every: 50,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.horizon == 0 {
            return Err(Error::Config("n_envs and horizon must be > 0".into()));
        }
        if self.randomization.mode == RandomizationMode::AssetAndDynamics {
            return Err(Error::Config("teacher training uses asset-only randomization".into()));
        }
        self.ppo.validate()?;
        self.reward.validate()?;
        self.randomization.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherLogRecord {
    pub iteration: usize,
    /// Mean per-step reward over the rollout.
    pub mean_reward: f64,
    /// Root-mean-square keypoint distance to the reference (m), averaged
    /// over rollout steps.
    pub mean_keypoint_error: f64,
    /// Mean ‖a_t − a_{t−1}‖ over rollout steps.
    pub mean_action_rate: f64,
    /// Mean undiscounted return of episodes that ended during the rollout.
    pub mean_return: Option<f64>,
    pub episodes: usize,
    pub falls: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl_approx: f64,
    pub clip_frac: f64,
    pub entropy: f64,
    /// Success rate (%) and MPKPE (m) of the periodic evaluation.
    pub sr: Option<f64>,
    pub mpkpe: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    /// The final policy, or the last good one when training diverged.
    pub policy: TeacherPolicy,
    pub log: Vec<TeacherLogRecord>,
    pub diverged: Option<String>,
}

impl Policy for TeacherPolicy {
    fn id(&self) -> String {
        match self.observation {
            ObservationKind::Oracle => "teacher".into(),
            ObservationKind::Deployable(_) => "scratch".into(),
        }
    }

    fn act(&self, input: &PolicyInput<'_>, _: &mut Rng) -> Result<Vec<f64>> {
        let obs = self.observation.build(input.model, input.state, input.history, input.clip, input.frame)?;
        self.act_mean_from_obs(&obs, input.clip, input.frame)
    }
}

struct Worker {
    env: TrackingEnv,
    history: Vec<Proprio>,
    episodes: u64,
    ret: f64,
    steps: usize,
}

fn start_episode(
    model: &RobotModel,
    clips: &[MotionClip],
    cfg: &TeacherConfig,
    index: usize,
    episodes: u64,
) -> Result<TrackingEnv> {
    let mut rng = stream(cfg.seed, &[STREAM_EPISODE, index as u64, episodes]);
    let clip = rng.random_range(0..clips.len());
    TrackingEnv::reset(model, clips, clip, None, &cfg.randomization, rng)
}

fn forward_rows(net: &Mlp, rows: &[Vec<f64>]) -> Result<ndarray::Array2<f64>> {
    let dim = net.spec.input_dim();
    Ok(net.forward_batch(&batch(rows, dim))?.0)
}

/// Evaluate the deterministic policy once per clip from the first frame.
pub fn quick_eval(policy: &TeacherPolicy, model: &RobotModel, clips: &[MotionClip], sim: SimConfig) -> Result<(f64, f64)> {
    let cfg = EvalConfig { sim, randomization: RandomizationSpec::none() };
    let r = evaluate_suite(policy, model, clips, &NoiseSpec::none(), &[0], &cfg)?;
    Ok((r.aggregate.sr, r.aggregate.all.mpkpe))
}

pub fn train_teacher(model: &RobotModel, clips: &[MotionClip], cfg: &TeacherConfig) -> Result<TeacherRun> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::invalid("teacher training needs at least one clip"));
    }
    let value_scale = 1.0 / (1.0 - cfg.ppo.gamma).max(1e-3);
    let mut policy = TeacherPolicy::with_observation(model, cfg.observation, &cfg.net, value_scale, cfg.seed)?;
    let observe = |w: &Worker| {
        cfg.observation.build(&w.env.model, &w.env.state, &w.history, &clips[w.env.clip], w.env.frame)
    };
    let mut opt = PpoOptimizer::new(&policy, cfg.ppo.lr);
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut workers = Vec::with_capacity(cfg.n_envs);
    for i in 0..cfg.n_envs {
        let env = start_episode(model, clips, cfg, i, 0)?;
        workers.push(Worker {
            history: vec![Proprio::from_state(&env.state)],
            env,
            episodes: 0,
            ret: 0.0,
            steps: 0,
        });
    }
    let act_dim = policy.act_dim();
    let mut last_good = policy.clone();

    for iter in 0..cfg.iterations {
        let progress = iter as f64 / cfg.iterations as f64;
        let mut action_rng = stream(cfg.seed, &[STREAM_ACTION, iter as u64]);
        let mut rollout = RolloutBatch::new(cfg.n_envs);
        let mut returns = Vec::new();
        let mut falls = 0;
        let mut reward_sum = 0.0;
        let mut kp_err_sum = 0.0;
        let mut rate_sum = 0.0;

        for _ in 0..cfg.horizon {
            let raw: Vec<Vec<f64>> = workers
                .iter()
                .map(observe)
                .collect::<Result<_>>()?;
            policy.obs_norm.update(&raw);
            let obs: Vec<Vec<f64>> = raw.iter().map(|o| policy.obs_norm.normalize(o)).collect();
            let mu = forward_rows(&policy.actor, &obs)?;
            let v = forward_rows(&policy.critic, &obs)?;
            let std = policy.log_std.iter().map(|l| l.exp()).collect::<Vec<_>>();

            for (e, w) in workers.iter_mut().enumerate() {
                let mean: Vec<f64> = mu.row(e).to_vec();
                let residual: Vec<f64> = (0..act_dim)
                    .map(|k| mean[k] + std[k] * action_rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let log_prob = gauss_log_prob(&residual, &mean, &policy.log_std);
                let clip = &clips[w.env.clip];
                let targets = policy.targets(&residual, &clip.frames[w.env.frame + 1].q);
                let out = w.env.step(&targets, clips, &cfg.sim)?;
                w.history.push(Proprio::from_state(&w.env.state));
                let mut r = if out.diverged {
                    0.0
                } else {
                    let errors = tracking_errors(&w.env.model, &w.env.state, clip, w.env.frame);
                    kp_err_sum += errors.keypoint_sq.sqrt();
                    rate_sum += targets.iter().zip(&out.before.prev_action).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    reward_from_errors(&errors, &targets, &out.before.prev_action, &out.info, &cfg.reward, progress).total
                };
                w.ret += r;
                w.steps += 1;
                reward_sum += r;
                let mut end = if !out.termination.is_alive() {
                    falls += 1;
                    StepEnd::Terminated(out.termination)
                } else if out.clip_end {
                    StepEnd::ClipEnd
                } else {
                    StepEnd::Running
                };
                if end == StepEnd::Running && cfg.max_episode_steps > 0 && w.steps >= cfg.max_episode_steps {
                    let o = observe(w)?;
                    let v_next = policy.critic.forward(&policy.obs_norm.normalize(&o))?[0] * value_scale;
                    r += cfg.ppo.gamma * v_next;
                    end = StepEnd::Truncated;
                }
                rollout.obs[e].push(obs[e].clone());
                rollout.actions[e].push(residual);
                rollout.log_probs[e].push(log_prob);
                rollout.rewards[e].push(r);
                rollout.values[e].push(v[[e, 0]] * value_scale);
                rollout.ends[e].push(end);
                if end.done() {
                    returns.push(w.ret);
                    w.episodes += 1;
                    w.env = start_episode(model, clips, cfg, e, w.episodes)?;
                    w.history = vec![Proprio::from_state(&w.env.state)];
                    w.ret = 0.0;
                    w.steps = 0;
                }
            }
        }
        let last_obs: Vec<Vec<f64>> = workers
            .iter()
            .map(|w| observe(w).map(|o| policy.obs_norm.normalize(&o)))
            .collect::<Result<_>>()?;
        let lv = forward_rows(&policy.critic, &last_obs)?;
        rollout.last_values = (0..cfg.n_envs).map(|e| lv[[e, 0]] * value_scale).collect();

        let n = rollout.n_samples() as f64;
        let mean_reward = reward_sum / n;
        let stats = if mean_reward.is_finite() {
            let (adv, ret) = gae(&rollout, cfg.ppo.gamma, cfg.ppo.lambda);
            let data = PpoBatch::from_rollout(&rollout, &adv, &ret);
            let mut rng = stream(cfg.seed, &[STREAM_PPO, iter as u64]);
            ppo_update(&mut policy, &mut opt, &data, &cfg.ppo, &mut rng)
        } else {
            Err(Error::TrainingDiverged { iteration: iter, detail: "mean rollout reward is not finite".into() })
        };
        let stats: PpoStats = match stats {
            Ok(s) if policy.actor.params.iter().chain(&policy.critic.params).all(|p| p.is_finite()) => s,
            Ok(_) => return Ok(diverged(last_good, log, iter, "non-finite network parameters".into())),
            Err(Error::TrainingDiverged { detail, .. }) => return Ok(diverged(last_good, log, iter, detail)),
            Err(e) => return Err(e),
        };

        let eval_now = cfg.eval_every > 0 && ((iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iterations);
        let (sr, mpkpe) = if eval_now {
            let (sr, mp) = quick_eval(&policy, model, clips, cfg.sim)?;
            (Some(sr), Some(mp))
        } else {
            (None, None)
        };
        log.push(TeacherLogRecord {
            iteration: iter,
            mean_reward,
            mean_keypoint_error: kp_err_sum / n,
            mean_action_rate: rate_sum / n,
            mean_return: (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64),
            episodes: returns.len(),
            falls,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            kl_approx: stats.kl_approx,
            clip_frac: stats.clip_frac,
            entropy: stats.entropy,
            sr,
            mpkpe,
        });
        last_good = policy.clone();
    }
    Ok(TeacherRun { policy, log, diverged: None })
}

fn diverged(policy: TeacherPolicy, log: Vec<TeacherLogRecord>, iter: usize, detail: String) -> TeacherRun {
    TeacherRun { policy, log, diverged: Some(format!("iteration {iter}: {detail}")) }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{generate_clip, ClipKind, ClipParams};
    use crate::neural::Activation;
    use crate::rng::seeded;

    fn setup() -> (RobotModel, Vec<MotionClip>, TeacherConfig) {
        let m = RobotModel::planar_biped();
        let clips = vec![
            generate_clip(&m, ClipKind::Stand, &ClipParams::default(), 50.0, 1.0, &mut seeded(0)).unwrap(),
            generate_clip(&m, ClipKind::Wave, &ClipParams::default(), 50.0, 1.0, &mut seeded(1)).unwrap(),
        ];
        let cfg = TeacherConfig {
            iterations: 3,
            n_envs: 4,
            horizon: 16,
            net: TeacherNetConfig { hidden: vec![16], activation: Activation::Elu, ..Default::default() },
            eval_every: 2,
            ..Default::default()
        };
        (m, clips, cfg)
    }

    #[test]
    fn zero_iterations_is_initialization() {
        let (m, clips, mut cfg) = setup();
        cfg.iterations = 0;
        let run = train_teacher(&m, &clips, &cfg).unwrap();
        let init = TeacherPolicy::for_robot(&m, &cfg.net, 1.0 / (1.0 - cfg.ppo.gamma), cfg.seed).unwrap();
        assert_eq!(run.policy, init);
        assert!(run.log.is_empty());
    }

    #[test]
    fn same_seed_same_log() {
        let (m, clips, cfg) = setup();
        let a = train_teacher(&m, &clips, &cfg).unwrap();
        let b = train_teacher(&m, &clips, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.log.len(), 3);
        assert!(a.log[1].sr.is_some() && a.log[2].sr.is_some() && a.log[0].sr.is_none());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(train_teacher(&m, &clips, &other).unwrap().log, a.log);
    }

    #[test]
    fn divergence_returns_last_good_policy() {
        let (m, clips, mut cfg) = setup();
        cfg.ppo.lr = f64::MAX;
        cfg.ppo.max_grad_norm = f64::MAX;
        let run = train_teacher(&m, &clips, &cfg).unwrap();
        assert!(run.diverged.is_some());
        assert!(run.policy.actor.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn rejects_dynamics_randomization_and_empty_clips() {
        let (m, clips, mut cfg) = setup();
        assert!(train_teacher(&m, &[], &cfg).is_err());
        cfg.randomization.mode = RandomizationMode::AssetAndDynamics;
        assert!(matches!(train_teacher(&m, &clips, &cfg), Err(Error::Config(_))));
    }
}
