//! Online DAgger distillation: the student drives the simulated robot, the
//! frozen teacher labels every visited state, and the student minimizes
//! `‖μ^D − a^oracle‖² + β·KL(encoder ‖ prior)`.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::cvae::{batch_noise, CvaeNetConfig, DistillBatch, DistillLoss, StudentArch, StudentPolicy};
use super::obs::{build_deploy_obs, DeployObsConfig};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_suite, EvalConfig, NoiseSpec, Policy, PolicyInput, Proprio};
use crate::motiondata::MotionClip;
use crate::neural::mlp::batch;
use crate::neural::{clip_grad_norm, Adam, AdamHyper};
use crate::rng::{stream, Rng};
use crate::simulator::{RandomizationMode, RandomizationSpec, RobotModel, SimConfig};
use crate::teacher::{build_oracle_obs, ObservationKind, TeacherPolicy, TrackingEnv};

const STREAM_EPISODE: u64 = 0x5e1;
const STREAM_ACT: u64 = 0x5e2;
const STREAM_UPDATE: u64 = 0x5e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillHyper {
    pub beta: f64,
    pub lr: f64,
    /// Passes over the sample buffer per iteration.
    pub epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
}

impl Default for DistillHyper {
    fn default() -> Self {
        DistillHyper { beta: 0.1, lr: 1e-3, epochs: 2, minibatch_size: 256, max_grad_norm: 1.0 }
    }
}

impl DistillHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.lr > 0.0) || self.epochs == 0 || self.minibatch_size == 0 || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!("invalid distillation hyperparameters: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub seed: u64,
    pub iterations: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub obs: DeployObsConfig,
    pub net: CvaeNetConfig,
    pub hyper: DistillHyper,
    /// Asset and dynamics randomization during distillation.
    pub randomization: RandomizationSpec,
    /// Whether random pushes are part of the dynamics randomization.
    pub pushes: bool,
    /// Most recent samples kept for updates (aggregated DAgger dataset).
    pub buffer_size: usize,
    pub sim: SimConfig,
    pub eval_every: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            seed: 0,
            iterations: 300,
            n_envs: 32,
            horizon: 32,
            obs: DeployObsConfig::default(),
            net: CvaeNetConfig::default(),
            hyper: DistillHyper::default(),
            randomization: RandomizationSpec::with_mode(RandomizationMode::AssetAndDynamics),
            pushes: true,
            buffer_size: 8192,
            sim: SimConfig::default(),
            eval_every: 50,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.horizon == 0 || self.buffer_size == 0 {
            return Err(Error::Config("n_envs, horizon and buffer_size must be > 0".into()));
        }
        self.obs.validate()?;
        self.hyper.validate()?;
        self.randomization.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentLogRecord {
    pub iteration: usize,
    pub l_action: f64,
    pub l_kl: f64,
    pub total: f64,
    /// Samples dropped because the teacher label was not finite.
    pub skipped: usize,
    /// Executed actions by source; distillation is on-policy, so the teacher
    /// count is always 0.
    pub student_actions: usize,
    pub teacher_actions: usize,
    pub episodes: usize,
    pub falls: usize,
    pub sr: Option<f64>,
    pub mpkpe: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub student: StudentPolicy,
    pub log: Vec<StudentLogRecord>,
    pub diverged: Option<String>,
}

impl Policy for StudentPolicy {
    fn id(&self) -> String {
        match self.net.arch {
            StudentArch::Cvae => "student".into(),
            StudentArch::Mlp => "student_mlp".into(),
        }
    }

    fn act(&self, input: &PolicyInput<'_>, rng: &mut Rng) -> Result<Vec<f64>> {
        let obs = build_deploy_obs(input.model, input.history, input.clip, input.frame, &self.obs)?;
        Ok(self.act_batch(&[obs.to_vec()], rng)?.row(0).to_vec())
    }
}

/// Teacher mean actions for raw oracle rows and next-frame reference joints.
pub fn teacher_labels(teacher: &TeacherPolicy, oracle_raw: &[Vec<f64>], ref_next_q: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = oracle_raw.iter().map(|o| teacher.obs_norm.normalize(o)).collect();
    let mu = teacher.actor.forward_batch(&batch(&rows, teacher.obs_dim()))?.0;
    Ok(mu.outer_iter().zip(ref_next_q).map(|(m, q)| teacher.targets(m.as_slice().unwrap(), q)).collect())
}

/// One DAgger update: `epochs` passes of minibatch Adam steps over `data`.
/// Returns the mean pre-step loss.
pub fn distill_step(
    student: &mut StudentPolicy,
    opt: &mut Adam,
    data: &DistillBatch,
    hyper: &DistillHyper,
    rng: &mut Rng,
) -> Result<DistillLoss> {
    hyper.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("empty distillation batch"));
    }
    let l = student.latent_dim();
    let mut order: Vec<usize> = (0..n).collect();
    let (mut sum, mut count) = (DistillLoss::default(), 0.0);
    let mut params = student.params();
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.minibatch_size) {
            let mb = data.select(chunk);
            let eps = batch_noise(chunk.len(), l, rng);
            let (loss, mut grads) = student.loss_and_grad(&mb, hyper.beta, &eps, true)?;
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { iteration: 0, detail: format!("non-finite distillation loss {loss:?}") });
            }
            clip_grad_norm(&mut grads, hyper.max_grad_norm);
            opt.step(&mut params, &grads);
            student.set_params(&params);
            sum.l_action += loss.l_action;
            sum.l_kl += loss.l_kl;
            count += 1.0;
        }
    }
    Ok(DistillLoss::new(sum.l_action / count, sum.l_kl / count, hyper.beta))
}

struct Worker {
    env: TrackingEnv,
    history: Vec<Proprio>,
    episodes: u64,
}

fn start(model: &RobotModel, clips: &[MotionClip], cfg: &StudentConfig, spec: &RandomizationSpec, i: usize, k: u64) -> Result<Worker> {
    let mut rng = stream(cfg.seed, &[STREAM_EPISODE, i as u64, k]);
    let clip = rng.random_range(0..clips.len());
    Ok(Worker { env: TrackingEnv::reset(model, clips, clip, None, spec, rng)?, history: Vec::new(), episodes: k })
}

pub fn student_quick_eval(student: &StudentPolicy, model: &RobotModel, clips: &[MotionClip], sim: SimConfig) -> Result<(f64, f64)> {
    let cfg = EvalConfig { sim, randomization: RandomizationSpec::none() };
    let r = evaluate_suite(student, model, clips, &NoiseSpec::none(), &[0], &cfg)?;
    Ok((r.aggregate.sr, r.aggregate.all.mpkpe))
}

pub fn train_student(
    model: &RobotModel,
    clips: &[MotionClip],
    teacher: &TeacherPolicy,
    cfg: &StudentConfig,
) -> Result<StudentRun> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::invalid("distillation needs at least one clip"));
    }
    if teacher.observation != ObservationKind::Oracle {
        return Err(Error::Config("distillation needs a teacher trained on oracle observations".into()));
    }
    let mut spec = cfg.randomization.clone();
    if !cfg.pushes {
        spec.push_interval_s = 0.0;
    }
    let mut student = StudentPolicy::new(model, cfg.obs, cfg.net.clone(), cfg.seed)?;
    let mut opt = Adam::new(student.n_params(), AdamHyper { lr: cfg.hyper.lr, ..Default::default() });
    let mut workers = (0..cfg.n_envs).map(|i| start(model, clips, cfg, &spec, i, 0)).collect::<Result<Vec<_>>>()?;
    let mut buffer: VecDeque<(Vec<f64>, Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(cfg.buffer_size);
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut last_good = student.clone();

    for iter in 0..cfg.iterations {
        let mut act_rng = stream(cfg.seed, &[STREAM_ACT, iter as u64]);
        let (mut skipped, mut steps, mut episodes, mut falls) = (0, 0, 0, 0);
        for _ in 0..cfg.horizon {
            let mut deploy = Vec::with_capacity(workers.len());
            let mut oracle = Vec::with_capacity(workers.len());
            let mut next_q = Vec::with_capacity(workers.len());
            for w in &mut workers {
                let clip = &clips[w.env.clip];
                w.history.push(Proprio::from_state(&w.env.state));
                deploy.push(build_deploy_obs(&w.env.model, &w.history, clip, w.env.frame, &cfg.obs)?.to_vec());
                oracle.push(build_oracle_obs(&w.env.model, &w.env.state, clip, w.env.frame)?.to_vec());
                next_q.push(clip.frames[w.env.frame + 1].q.clone());
            }
            student.deploy_norm.update(&deploy);
            student.oracle_norm.update(&oracle);
            let actions = student.act_batch(&deploy, &mut act_rng)?;
            let labels = teacher_labels(teacher, &oracle, &next_q)?;
            for (e, w) in workers.iter_mut().enumerate() {
                if labels[e].iter().all(|a| a.is_finite()) {
                    if buffer.len() == cfg.buffer_size {
                        buffer.pop_front();
                    }
                    buffer.push_back((deploy[e].clone(), oracle[e].clone(), labels[e].clone()));
                } else {
                    skipped += 1;
                }
                let out = w.env.step(actions.row(e).as_slice().unwrap(), clips, &cfg.sim)?;
                steps += 1;
                if out.done() {
                    if !out.termination.is_alive() {
                        falls += 1;
                    }
                    episodes += 1;
                    *w = start(model, clips, cfg, &spec, e, w.episodes + 1)?;
                }
            }
        }
        if buffer.is_empty() {
            return Err(Error::TrainingDiverged { iteration: iter, detail: "every teacher label was non-finite".into() });
        }
        let (d, o, y): (Vec<_>, Vec<_>, Vec<_>) = buffer.iter().cloned().fold((vec![], vec![], vec![]), |mut acc, (d, o, y)| {
            acc.0.push(d);
            acc.1.push(o);
            acc.2.push(y);
            acc
        });
        let data = student.make_batch(&d, &o, &y)?;
        let mut rng = stream(cfg.seed, &[STREAM_UPDATE, iter as u64]);
        let loss = match distill_step(&mut student, &mut opt, &data, &cfg.hyper, &mut rng) {
            Ok(l) => l,
            Err(Error::TrainingDiverged { detail, .. }) => {
                return Ok(StudentRun { student: last_good, log, diverged: Some(format!("iteration {iter}: {detail}")) })
            }
            Err(e) => return Err(e),
        };
        let eval_now = cfg.eval_every > 0 && ((iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iterations);
        let (sr, mpkpe) = if eval_now {
            let (sr, mp) = student_quick_eval(&student, model, clips, cfg.sim)?;
            (Some(sr), Some(mp))
        } else {
            (None, None)
        };
        log.push(StudentLogRecord {
            iteration: iter,
            l_action: loss.l_action,
            l_kl: loss.l_kl,
            total: loss.total,
            skipped,
            student_actions: steps,
            teacher_actions: 0,
            episodes,
            falls,
            sr,
            mpkpe,
        });
        last_good = student.clone();
    }
    Ok(StudentRun { student, log, diverged: None })
}
