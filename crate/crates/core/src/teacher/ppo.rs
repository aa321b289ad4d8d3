//! Rollout storage, generalized advantage estimation and the clipped PPO
//! update with hand-derived gradients.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::TeacherPolicy;
use crate::error::{Error, Result};
use crate::neural::gaussian::clamp_log_std;
use crate::neural::mlp::batch;
use crate::neural::{clip_grad_norm, gauss_log_prob_grad, Adam, AdamHyper};
use crate::rng::Rng;
use crate::simulator::Termination;

/// Why a step ended its episode, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEnd {
    Running,
    Terminated(Termination),
    /// Reference exhausted: the tracking task is over.
    ClipEnd,
    /// Cut by the episode step limit; the reward already contains the
    /// discounted bootstrap value.
    Truncated,
}

impl StepEnd {
    pub fn done(self) -> bool {
        self != StepEnd::Running
    }
}

/// Transitions from `n_envs` environments over a common horizon, indexed
/// `[env][step]`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<Vec<f64>>>,
    pub log_probs: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub ends: Vec<Vec<StepEnd>>,
    /// Value of the state after the last step of each env (bootstrap).
    pub last_values: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(n_envs: usize) -> Self {
        RolloutBatch {
            obs: vec![Vec::new(); n_envs],
            actions: vec![Vec::new(); n_envs],
            log_probs: vec![Vec::new(); n_envs],
            rewards: vec![Vec::new(); n_envs],
            values: vec![Vec::new(); n_envs],
            ends: vec![Vec::new(); n_envs],
            last_values: vec![0.0; n_envs],
        }
    }

    pub fn n_envs(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_samples(&self) -> usize {
        self.rewards.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rewards.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: 0, detail: "non-finite reward in rollout".into() });
        }
        Ok(())
    }
}

/// GAE(γ, λ): `δ_t = r_t + γ V_{t+1} (1 − done_t) − V_t`,
/// `A_t = δ_t + γ λ (1 − done_t) A_{t+1}`, returns `A + V`.
pub fn gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut advs = Vec::with_capacity(batch.n_envs());
    let mut rets = Vec::with_capacity(batch.n_envs());
    for e in 0..batch.n_envs() {
        let r = &batch.rewards[e];
        let v = &batch.values[e];
        let n = r.len();
        let mut adv = vec![0.0; n];
        let mut next_adv = 0.0;
        for t in (0..n).rev() {
            let next_v = if t + 1 < n { v[t + 1] } else { batch.last_values[e] };
            let live = if batch.ends[e][t].done() { 0.0 } else { 1.0 };
            let delta = r[t] + gamma * next_v * live - v[t];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[t] = next_adv;
        }
        rets.push(adv.iter().zip(v).map(|(a, v)| a + v).collect());
        advs.push(adv);
    }
    (advs, rets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs: 5,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            lr: 3e-4,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.lambda)
            && self.clip_eps > 0.0
            && self.epochs > 0
            && self.minibatches > 0
            && self.lr > 0.0
            && self.max_grad_norm > 0.0
            && self.value_coef >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid PPO hyperparameters: {self:?}")))
        }
    }
}

/// Flattened training samples for one PPO update.
#[derive(Debug, Clone)]
pub struct PpoBatch {
    /// Normalized observations, one row per sample.
    pub obs: Array2<f64>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn from_rollout(rollout: &RolloutBatch, advantages: &[Vec<f64>], returns: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<f64>> = rollout.obs.iter().flatten().cloned().collect();
        let dim = rows.first().map_or(0, Vec::len);
        PpoBatch {
            obs: batch(&rows, dim),
            actions: rollout.actions.iter().flatten().cloned().collect(),
            log_probs: rollout.log_probs.iter().flatten().copied().collect(),
            advantages: advantages.iter().flatten().copied().collect(),
            returns: returns.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

/// Optimizer state for actor (weights followed by log_std) and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoOptimizer {
    pub actor: Adam,
    pub critic: Adam,
}

impl PpoOptimizer {
    pub fn new(policy: &TeacherPolicy, lr: f64) -> Self {
        let hyper = AdamHyper { lr, ..Default::default() };
        PpoOptimizer {
            actor: Adam::new(policy.actor.n_params() + policy.act_dim(), hyper),
            critic: Adam::new(policy.critic.n_params(), hyper),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_approx: f64,
    pub clip_frac: f64,
    /// Largest |ratio − 1| in the first minibatch of the first epoch, before
    /// any parameter change; it must be 0 up to rounding.
    pub first_ratio_dev: f64,
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), idx)
}

/// Clipped-surrogate PPO update. Advantages are normalized over the batch.
pub fn ppo_update(
    policy: &mut TeacherPolicy,
    opt: &mut PpoOptimizer,
    data: &PpoBatch,
    hyper: &PpoHyper,
    rng: &mut Rng,
) -> Result<PpoStats> {
    hyper.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("empty PPO batch"));
    }
    let mean = data.advantages.iter().sum::<f64>() / n as f64;
    let var = data.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let adv: Vec<f64> = data.advantages.iter().map(|a| (a - mean) / (var.sqrt() + 1e-8)).collect();

    let act_dim = policy.act_dim();
    let n_actor = policy.actor.n_params();
    let mb_count = hyper.minibatches.min(n);
    let mut stats = PpoStats::default();
    let mut updates = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        for mb in 0..mb_count {
            let idx = &order[mb * n / mb_count..(mb + 1) * n / mb_count];
            let b = idx.len() as f64;
            let x = select_rows(&data.obs, idx);
            let (mu, cache_a) = policy.actor.forward_batch(&x)?;
            let (v, cache_c) = policy.critic.forward_batch(&x)?;
            let mut g_mu = Array2::<f64>::zeros((idx.len(), act_dim));
            let mut g_v = Array2::<f64>::zeros((idx.len(), 1));
            let mut g_log_std = vec![0.0; act_dim];
            let (mut pl, mut vl, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0.0);
            let mut max_dev: f64 = 0.0;
            for (row, &i) in idx.iter().enumerate() {
                let mu_i = mu.row(row);
                let (lp, dm, dl) = gauss_log_prob_grad(&data.actions[i], mu_i.as_slice().unwrap(), &policy.log_std);
                let log_ratio = lp - data.log_probs[i];
                let ratio = log_ratio.exp();
                max_dev = max_dev.max((ratio - 1.0).abs());
                let a = adv[i];
                let s1 = ratio * a;
                let s2 = ratio.clamp(1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * a;
                pl -= s1.min(s2);
                if (ratio - 1.0).abs() > hyper.clip_eps {
                    clipped += 1.0;
                }
                kl += (ratio - 1.0) - log_ratio;
                let d_lp = if s1 <= s2 { -a * ratio / b } else { 0.0 };
                for k in 0..act_dim {
                    g_mu[[row, k]] = d_lp * dm[k];
                    g_log_std[k] += d_lp * dl[k];
                }
                let target = data.returns[i] / policy.value_scale;
                let err = v[[row, 0]] - target;
                vl += err * err;
                g_v[[row, 0]] = hyper.value_coef * 2.0 * err / b;
            }
            let entropy = policy.log_std.iter().sum::<f64>() + act_dim as f64 * (0.5 + 0.918_938_533_204_672_7);
            for g in &mut g_log_std {
                *g -= hyper.entropy_coef;
            }
            let (pl, vl) = (pl / b, vl / b);
            if !pl.is_finite() || !vl.is_finite() {
                return Err(Error::TrainingDiverged {
                    iteration: epoch,
                    detail: format!("non-finite PPO loss (policy {pl}, value {vl}) in minibatch {mb}"),
                });
            }
            if epoch == 0 && mb == 0 {
                stats.first_ratio_dev = max_dev;
            }

            let mut ga = vec![0.0; n_actor + act_dim];
            policy.actor.backward_batch(&cache_a, &g_mu, &mut ga[..n_actor]);
            ga[n_actor..].copy_from_slice(&g_log_std);
            let mut gc = policy.critic.zero_grads();
            policy.critic.backward_batch(&cache_c, &g_v, &mut gc);
            clip_grad_norm(&mut ga, hyper.max_grad_norm);
            clip_grad_norm(&mut gc, hyper.max_grad_norm);

            let mut flat = policy.actor.params.clone();
            flat.extend_from_slice(&policy.log_std);
            opt.actor.step(&mut flat, &ga);
            policy.log_std = flat[n_actor..].iter().map(|&l| clamp_log_std(l)).collect();
            flat.truncate(n_actor);
            policy.actor.params = flat;
            opt.critic.step(&mut policy.critic.params, &gc);

            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.entropy += entropy;
            stats.kl_approx += kl / b;
            stats.clip_frac += clipped / b;
            updates += 1.0;
        }
    }
    stats.policy_loss /= updates;
    stats.value_loss /= updates;
    stats.entropy /= updates;
    stats.kl_approx /= updates;
    stats.clip_frac /= updates;
    Ok(stats)
}
