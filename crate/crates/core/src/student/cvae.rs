//! Student policy: a conditional VAE with a learned prior over the
//! deployable observation, a residual encoder over the oracle observation and
//! an action decoder that sees proprioception and the latent only. A plain
//! MLP student (no latent) is kept as a baseline.

use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::obs::DeployObsConfig;
use crate::error::{Error, Result};
use crate::neural::gaussian::clamp_log_std;
use crate::neural::{
    kl_diag_gauss_grad, load_json, save_json, Activation, Init, Mlp, MlpCache, MlpSpec, RunningNorm, LOG_STD_MAX,
    LOG_STD_MIN,
};
use crate::rng::Rng;
use crate::simulator::RobotModel;
use crate::teacher::OracleObs;

pub const STUDENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentArch {
    Cvae,
    /// Baseline: one MLP over proprioception and goal, no latent.
    Mlp,
}

/// How the deployed student chooses its latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// `z = μ^ρ`.
    Deterministic,
    /// `z ~ N(μ^ρ, σ^ρ)`.
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// `z` sampled from the encoder (needs the oracle observation).
    Train,
    DeployPriorMean,
    DeployPriorSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeNetConfig {
    pub arch: StudentArch,
    pub latent_dim: usize,
    pub prior_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    /// Encoder mean is `μ^ρ + Δμ` when on, an independent output when off.
    pub residual: bool,
    /// Ablation variant: the decoder also receives the goal.
    pub explicit_ref: bool,
    pub latent_mode: LatentMode,
}

impl Default for CvaeNetConfig {
    fn default() -> Self {
        CvaeNetConfig {
            arch: StudentArch::Cvae,
            latent_dim: 64,
            prior_hidden: vec![256, 128],
            encoder_hidden: vec![256, 128],
            decoder_hidden: vec![256, 128],
            activation: Activation::Elu,
            residual: true,
            explicit_ref: false,
            latent_mode: LatentMode::Deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentPolicy {
    pub format_version: u32,
    pub obs: DeployObsConfig,
    pub net: CvaeNetConfig,
    pub n_joints: usize,
    pub step_dim: usize,
    pub goal_dim: usize,
    pub oracle_dim: usize,
    pub prior: Option<Mlp>,
    pub encoder: Option<Mlp>,
    pub decoder: Mlp,
    pub deploy_norm: RunningNorm,
    pub oracle_norm: RunningNorm,
}

/// Gaussian heads of one forward pass, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeHeads {
    pub prior_mean: Array2<f64>,
    pub prior_log_std: Array2<f64>,
    pub enc_mean: Option<Array2<f64>>,
    pub enc_log_std: Option<Array2<f64>>,
    pub dec_mean: Array2<f64>,
    pub dec_log_std: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    /// Joint targets, one row per sample.
    pub action: Array2<f64>,
    pub z: Array2<f64>,
    pub heads: CvaeHeads,
}

/// Normalized training samples.
#[derive(Debug, Clone)]
pub struct DistillBatch {
    pub deploy: Array2<f64>,
    pub oracle: Array2<f64>,
    /// Raw current joint positions (the decoder's skip connection).
    pub q: Array2<f64>,
    pub labels: Array2<f64>,
}

impl DistillBatch {
    pub fn len(&self) -> usize {
        self.labels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.nrows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> DistillBatch {
        DistillBatch {
            deploy: self.deploy.select(Axis(0), idx),
            oracle: self.oracle.select(Axis(0), idx),
            q: self.q.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
        }
    }
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillLoss {
    pub l_action: f64,
    pub l_kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl DistillLoss {
    pub fn new(l_action: f64, l_kl: f64, beta: f64) -> Self {
        DistillLoss { l_action, l_kl, beta, total: l_action + beta * l_kl }
    }
}

fn net(input: usize, hidden: &[usize], output: usize, act: Activation, seed: u64, gain: f64) -> Result<Mlp> {
    let mut sizes = vec![input];
    sizes.extend(hidden);
    sizes.push(output);
    Mlp::new(MlpSpec::new(sizes, act, Init::Orthogonal, seed).with_output_gain(gain))
}

fn clamp_grad(raw: f64) -> f64 {
    if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
        1.0
    } else {
        0.0
    }
}

struct Pass {
    prior: Option<(Array2<f64>, MlpCache)>,
    encoder: Option<(Array2<f64>, MlpCache)>,
    decoder: (Array2<f64>, MlpCache),
    heads: CvaeHeads,
    z: Array2<f64>,
    eps: Option<Array2<f64>>,
    action: Array2<f64>,
}

impl StudentPolicy {
    pub fn new(model: &RobotModel, obs: DeployObsConfig, net_cfg: CvaeNetConfig, seed: u64) -> Result<Self> {
        obs.validate()?;
        if net_cfg.arch == StudentArch::Cvae && net_cfg.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be > 0".into()));
        }
        let nj = model.n_joints();
        let step_dim = DeployObsConfig::step_dim(model);
        let proprio_dim = obs.proprio_dim(model);
        let goal_dim = obs.goal_dim(model);
        let oracle_dim = OracleObs::dim(model);
        let l = net_cfg.latent_dim;
        let act = net_cfg.activation;
        let (prior, encoder, dec_in) = match net_cfg.arch {
            StudentArch::Mlp => (None, None, proprio_dim + goal_dim),
            StudentArch::Cvae => {
                let prior = net(proprio_dim + goal_dim, &net_cfg.prior_hidden, 2 * l, act, seed ^ 0x9a, 0.1)?;
                let encoder = net(oracle_dim, &net_cfg.encoder_hidden, 2 * l, act, seed ^ 0x3c, 0.01)?;
                let dec_in = proprio_dim + if net_cfg.explicit_ref { goal_dim } else { 0 } + l;
                (Some(prior), Some(encoder), dec_in)
            }
        };
        let decoder = net(dec_in, &net_cfg.decoder_hidden, 2 * nj, act, seed ^ 0x5d, 0.01)?;
        Ok(StudentPolicy {
            format_version: STUDENT_FORMAT_VERSION,
            obs,
            net: net_cfg,
            n_joints: nj,
            step_dim,
            goal_dim,
            oracle_dim,
            prior,
            encoder,
            decoder,
            deploy_norm: RunningNorm::new(proprio_dim + goal_dim),
            oracle_norm: RunningNorm::new(oracle_dim),
        })
    }

    pub fn proprio_dim(&self) -> usize {
        self.obs.history * self.step_dim
    }

    pub fn deploy_dim(&self) -> usize {
        self.proprio_dim() + self.goal_dim
    }

    pub fn latent_dim(&self) -> usize {
        match self.net.arch {
            StudentArch::Cvae => self.net.latent_dim,
            StudentArch::Mlp => 0,
        }
    }

    /// Decoder input width; with the default wiring it is proprioception
    /// plus latent and carries no goal features.
    pub fn decoder_input_dim(&self) -> usize {
        self.decoder.spec.input_dim()
    }

    /// Raw current joint positions inside a raw deployable vector.
    pub fn current_q<'a>(&self, deploy_raw: &'a [f64]) -> &'a [f64] {
        let at = (self.obs.history - 1) * self.step_dim;
        &deploy_raw[at..at + self.n_joints]
    }

    pub fn n_params(&self) -> usize {
        self.prior.as_ref().map_or(0, Mlp::n_params)
            + self.encoder.as_ref().map_or(0, Mlp::n_params)
            + self.decoder.n_params()
    }

    /// Parameters of prior, encoder and decoder, concatenated.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for m in [&self.prior, &self.encoder].into_iter().flatten() {
            p.extend(&m.params);
        }
        p.extend(&self.decoder.params);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "student parameter count");
        let mut at = 0;
        for m in [&mut self.prior, &mut self.encoder].into_iter().flatten() {
            let n = m.n_params();
            m.params.copy_from_slice(&p[at..at + n]);
            at += n;
        }
        self.decoder.params.copy_from_slice(&p[at..]);
    }

    /// Normalize raw rows into a training batch.
    pub fn make_batch(
        &self,
        deploy_raw: &[Vec<f64>],
        oracle_raw: &[Vec<f64>],
        labels: &[Vec<f64>],
    ) -> Result<DistillBatch> {
        let n = deploy_raw.len();
        if oracle_raw.len() != n || labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: oracle_raw.len().min(labels.len()), context: "distill batch" });
        }
        let nj = self.n_joints;
        let mut d = Array2::zeros((n, self.deploy_dim()));
        let mut o = Array2::zeros((n, self.oracle_dim));
        let mut q = Array2::zeros((n, nj));
        let mut y = Array2::zeros((n, nj));
        for i in 0..n {
            if deploy_raw[i].len() != self.deploy_dim() || oracle_raw[i].len() != self.oracle_dim || labels[i].len() != nj {
                return Err(Error::invalid("distill batch row has the wrong width"));
            }
            d.row_mut(i).assign(&ndarray::ArrayView1::from(&self.deploy_norm.normalize(&deploy_raw[i])));
            o.row_mut(i).assign(&ndarray::ArrayView1::from(&self.oracle_norm.normalize(&oracle_raw[i])));
            q.row_mut(i).assign(&ndarray::ArrayView1::from(self.current_q(&deploy_raw[i])));
            y.row_mut(i).assign(&ndarray::ArrayView1::from(&labels[i]));
        }
        Ok(DistillBatch { deploy: d, oracle: o, q, labels: y })
    }

    fn decoder_input(&self, deploy: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
        let p = self.proprio_dim();
        let mut parts = vec![deploy.slice(s![.., ..p])];
        match self.net.arch {
            StudentArch::Mlp => parts.push(deploy.slice(s![.., p..])),
            StudentArch::Cvae => {
                if self.net.explicit_ref {
                    parts.push(deploy.slice(s![.., p..]));
                }
                parts.push(z.view());
            }
        }
        ndarray::concatenate(Axis(1), &parts).expect("decoder input columns")
    }

    fn pass(
        &self,
        deploy: &Array2<f64>,
        oracle: Option<&Array2<f64>>,
        q: &Array2<f64>,
        mode: ForwardMode,
        eps: Option<&Array2<f64>>,
        rng: Option<&mut Rng>,
    ) -> Result<Pass> {
        let b = deploy.nrows();
        let l = self.latent_dim();
        let nj = self.n_joints;
        let mut prior = None;
        let mut encoder = None;
        let mut heads_prior = (Array2::zeros((b, l)), Array2::zeros((b, l)));
        let mut heads_enc = (None, None);
        let mut used_eps = None;
        let z = match self.net.arch {
            StudentArch::Mlp => Array2::zeros((b, 0)),
            StudentArch::Cvae => {
                let pnet = self.prior.as_ref().expect("cvae prior");
                let (po, pc) = pnet.forward_batch(deploy)?;
                let mu_p = po.slice(s![.., ..l]).to_owned();
                let ls_p = po.slice(s![.., l..]).mapv(clamp_log_std);
                let draw = |rng: Option<&mut Rng>| -> Result<Array2<f64>> {
                    match (eps, rng) {
                        (Some(e), _) => Ok(e.clone()),
                        (None, Some(r)) => Ok(Array2::from_shape_fn((b, l), |_| r.sample(StandardNormal))),
                        (None, None) => Err(Error::invalid("sampling mode needs noise or an rng")),
                    }
                };
                let z = match mode {
                    ForwardMode::DeployPriorMean => mu_p.clone(),
                    ForwardMode::DeployPriorSample => {
                        let e = draw(rng)?;
                        let z = &mu_p + &(ls_p.mapv(f64::exp) * &e);
                        used_eps = Some(e);
                        z
                    }
                    ForwardMode::Train => {
                        let o = oracle.ok_or_else(|| Error::invalid("train mode needs the oracle observation"))?;
                        let enet = self.encoder.as_ref().expect("cvae encoder");
                        let (eo, ec) = enet.forward_batch(o)?;
                        let mut mu_e = eo.slice(s![.., ..l]).to_owned();
                        if self.net.residual {
                            mu_e += &mu_p;
                        }
                        let ls_e = eo.slice(s![.., l..]).mapv(clamp_log_std);
                        let e = draw(rng)?;
                        let z = &mu_e + &(ls_e.mapv(f64::exp) * &e);
                        used_eps = Some(e);
                        heads_enc = (Some(mu_e), Some(ls_e));
                        encoder = Some((eo, ec));
                        z
                    }
                };
                heads_prior = (mu_p, ls_p);
                prior = Some((po, pc));
                z
            }
        };
        let (dout, dc) = self.decoder.forward_batch(&self.decoder_input(deploy, &z))?;
        let dec_mean = dout.slice(s![.., ..nj]).to_owned();
        let dec_log_std = dout.slice(s![.., nj..]).mapv(clamp_log_std);
        let action = q + &dec_mean;
        Ok(Pass {
            prior,
            encoder,
            decoder: (dout, dc),
            heads: CvaeHeads {
                prior_mean: heads_prior.0,
                prior_log_std: heads_prior.1,
                enc_mean: heads_enc.0,
                enc_log_std: heads_enc.1,
                dec_mean,
                dec_log_std,
            },
            z,
            eps: used_eps,
            action,
        })
    }

    /// Forward pass on raw observations. Train mode requires oracle rows.
    pub fn forward(
        &self,
        deploy_raw: &[Vec<f64>],
        oracle_raw: Option<&[Vec<f64>]>,
        mode: ForwardMode,
        rng: &mut Rng,
    ) -> Result<StudentOutput> {
        if mode == ForwardMode::Train && oracle_raw.is_none() {
            return Err(Error::invalid("train mode needs the oracle observation"));
        }
        let n = deploy_raw.len();
        let mut d = Array2::zeros((n, self.deploy_dim()));
        let mut q = Array2::zeros((n, self.n_joints));
        for (i, r) in deploy_raw.iter().enumerate() {
            if r.len() != self.deploy_dim() {
                return Err(Error::DimensionMismatch { expected: self.deploy_dim(), got: r.len(), context: "deploy obs" });
            }
            d.row_mut(i).assign(&ndarray::ArrayView1::from(&self.deploy_norm.normalize(r)));
            q.row_mut(i).assign(&ndarray::ArrayView1::from(self.current_q(r)));
        }
        let o = match oracle_raw {
            Some(rows) => {
                let mut o = Array2::zeros((n, self.oracle_dim));
                for (i, r) in rows.iter().enumerate() {
                    if r.len() != self.oracle_dim {
                        return Err(Error::DimensionMismatch { expected: self.oracle_dim, got: r.len(), context: "oracle obs" });
                    }
                    o.row_mut(i).assign(&ndarray::ArrayView1::from(&self.oracle_norm.normalize(r)));
                }
                Some(o)
            }
            None => None,
        };
        let p = self.pass(&d, o.as_ref(), &q, mode, None, Some(rng))?;
        Ok(StudentOutput { action: p.action, z: p.z, heads: p.heads })
    }

    /// Deployment action for raw deployable rows, using the configured latent
    /// mode.
    pub fn act_batch(&self, deploy_raw: &[Vec<f64>], rng: &mut Rng) -> Result<Array2<f64>> {
        let mode = match self.net.latent_mode {
            LatentMode::Deterministic => ForwardMode::DeployPriorMean,
            LatentMode::Stochastic => ForwardMode::DeployPriorSample,
        };
        Ok(self.forward(deploy_raw, None, mode, rng)?.action)
    }

    /// Loss on a batch with fixed reparameterization noise `eps` (ignored by
    /// the MLP student).
    pub fn loss(&self, batch: &DistillBatch, beta: f64, eps: &Array2<f64>) -> Result<DistillLoss> {
        Ok(self.loss_and_grad(batch, beta, eps, false)?.0)
    }

    /// Loss and, when `with_grad`, its gradient with respect to
    /// [`StudentPolicy::params`].
    pub fn loss_and_grad(
        &self,
        batch: &DistillBatch,
        beta: f64,
        eps: &Array2<f64>,
        with_grad: bool,
    ) -> Result<(DistillLoss, Vec<f64>)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::invalid("empty distillation batch"));
        }
        let bf = b as f64;
        let l = self.latent_dim();
        let nj = self.n_joints;
        let cvae = self.net.arch == StudentArch::Cvae;
        let mode = if cvae { ForwardMode::Train } else { ForwardMode::DeployPriorMean };
        let p = self.pass(&batch.deploy, Some(&batch.oracle), &batch.q, mode, cvae.then_some(eps), None)?;

        let diff = &p.action - &batch.labels;
        let l_action = diff.iter().map(|d| d * d).sum::<f64>() / bf;
        let mut l_kl = 0.0;
        let mut kl_grads = Vec::with_capacity(if cvae { b } else { 0 });
        if cvae {
            let (mu_e, ls_e) = (p.heads.enc_mean.as_ref().unwrap(), p.heads.enc_log_std.as_ref().unwrap());
            for i in 0..b {
                let (kl, g) = kl_diag_gauss_grad(
                    mu_e.row(i).as_slice().unwrap(),
                    ls_e.row(i).as_slice().unwrap(),
                    p.heads.prior_mean.row(i).as_slice().unwrap(),
                    p.heads.prior_log_std.row(i).as_slice().unwrap(),
                );
                l_kl += kl / bf;
                kl_grads.push(g);
            }
        }
        let loss = DistillLoss::new(l_action, l_kl, beta);
        if !with_grad {
            return Ok((loss, Vec::new()));
        }

        // Decoder: ∂/∂μ^D = 2(a − a*)/B; σ^D receives no gradient.
        let mut g_dec_out = Array2::zeros((b, 2 * nj));
        g_dec_out.slice_mut(s![.., ..nj]).assign(&(&diff * (2.0 / bf)));
        let mut g_dec = self.decoder.zero_grads();
        let g_dec_in = self.decoder.backward_batch(&p.decoder.1, &g_dec_out, &mut g_dec);
        let mut grads = Vec::with_capacity(self.n_params());
        if cvae {
            let g_z = g_dec_in.slice(s![.., g_dec_in.ncols() - l..]).to_owned();
            let eps = p.eps.as_ref().unwrap();
            let ls_e = p.heads.enc_log_std.as_ref().unwrap();
            let (po, pc) = p.prior.as_ref().unwrap();
            let (eo, ec) = p.encoder.as_ref().unwrap();
            let mut g_prior_out = Array2::zeros((b, 2 * l));
            let mut g_enc_out = Array2::zeros((b, 2 * l));
            for i in 0..b {
                let kg = &kl_grads[i];
                for k in 0..l {
                    let g_mu_e = g_z[[i, k]] + beta * kg.d_mu1[k] / bf;
                    let g_ls_e = g_z[[i, k]] * ls_e[[i, k]].exp() * eps[[i, k]] + beta * kg.d_log_s1[k] / bf;
                    g_enc_out[[i, k]] = g_mu_e;
                    g_enc_out[[i, l + k]] = g_ls_e * clamp_grad(eo[[i, l + k]]);
                    let mut g_mu_p = beta * kg.d_mu2[k] / bf;
                    if self.net.residual {
                        g_mu_p += g_mu_e;
                    }
                    g_prior_out[[i, k]] = g_mu_p;
                    g_prior_out[[i, l + k]] = beta * kg.d_log_s2[k] / bf * clamp_grad(po[[i, l + k]]);
                }
            }
            let prior = self.prior.as_ref().unwrap();
            let mut gp = prior.zero_grads();
            prior.backward_batch(pc, &g_prior_out, &mut gp);
            let enc = self.encoder.as_ref().unwrap();
            let mut ge = enc.zero_grads();
            enc.backward_batch(ec, &g_enc_out, &mut ge);
            grads.extend(gp);
            grads.extend(ge);
        }
        grads.extend(g_dec);
        Ok((loss, grads))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: StudentPolicy = load_json(path)?;
        if p.format_version != STUDENT_FORMAT_VERSION {
            return Err(Error::FormatVersion { found: p.format_version, expected: STUDENT_FORMAT_VERSION });
        }
        Ok(p)
    }
}

/// Standard-normal noise from a fresh seeded stream.
pub fn batch_noise_for_tests(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    batch_noise(rows, cols, &mut crate::rng::seeded(seed))
}

/// Standard-normal noise for a batch.
pub fn batch_noise(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gauss_log_prob;
    use crate::rng::seeded;

    fn tiny(arch: StudentArch, residual: bool, explicit_ref: bool) -> (RobotModel, StudentPolicy) {
        let m = RobotModel::planar_biped();
        let net = CvaeNetConfig {
            arch,
            latent_dim: 4,
            prior_hidden: vec![12, 8],
            encoder_hidden: vec![12],
            decoder_hidden: vec![12, 8],
            activation: Activation::Tanh,
            residual,
            explicit_ref,
            latent_mode: LatentMode::Deterministic,
        };
        let s = StudentPolicy::new(&m, DeployObsConfig { history: 2, window: 2 }, net, 5).unwrap();
        (m, s)
    }

    fn random_batch(s: &StudentPolicy, n: usize, seed: u64) -> DistillBatch {
        let mut rng = seeded(seed);
        let rows = |d: usize, rng: &mut Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let d = rows(s.deploy_dim(), &mut rng);
        let o = rows(s.oracle_dim, &mut rng);
        let y = rows(s.n_joints, &mut rng);
        s.make_batch(&d, &o, &y).unwrap()
    }

    fn zero_output_layer(m: &mut Mlp, rows: std::ops::Range<usize>) {
        let l = m.spec.n_layers() - 1;
        let (w_off, b_off) = m.spec.offsets(l);
        let inp = m.spec.layer_sizes[l];
        for r in rows {
            for c in 0..inp {
                m.params[w_off + r * inp + c] = 0.0;
            }
            m.params[b_off + r] = 0.0;
        }
    }

    #[test]
    fn residual_zero_gives_zero_kl() {
        let (_, mut s) = tiny(StudentArch::Cvae, true, false);
        let l = s.latent_dim();
        zero_output_layer(s.encoder.as_mut().unwrap(), 0..2 * l);
        zero_output_layer(s.prior.as_mut().unwrap(), l..2 * l);
        let b = random_batch(&s, 16, 1);
        let loss = s.loss(&b, 0.1, &batch_noise(16, l, &mut seeded(2))).unwrap();
        assert_eq!(loss.l_kl, 0.0);
        assert_eq!(loss.total, loss.l_action);
        // The train-mode latent distribution is the prior.
        let d: Vec<Vec<f64>> = (0..3).map(|i| vec![0.1 * i as f64; s.deploy_dim()]).collect();
        let o: Vec<Vec<f64>> = (0..3).map(|i| vec![-0.2 * i as f64; s.oracle_dim]).collect();
        let out = s.forward(&d, Some(&o), ForwardMode::Train, &mut seeded(3)).unwrap();
        assert_eq!(out.heads.enc_mean.unwrap(), out.heads.prior_mean);
        assert_eq!(out.heads.enc_log_std.unwrap(), out.heads.prior_log_std);
    }

    #[test]
    fn deploy_prior_mean_is_deterministic() {
        let (_, s) = tiny(StudentArch::Cvae, true, false);
        let d = vec![vec![0.3; s.deploy_dim()]];
        let a = s.forward(&d, None, ForwardMode::DeployPriorMean, &mut seeded(1)).unwrap();
        let b = s.forward(&d, None, ForwardMode::DeployPriorMean, &mut seeded(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z, a.heads.prior_mean);
    }

    #[test]
    fn prior_samples_differ_between_seeds() {
        let (_, s) = tiny(StudentArch::Cvae, true, false);
        let d = vec![vec![0.3; s.deploy_dim()]];
        let mut distinct = 0;
        for seed in 0..100u64 {
            let a = s.forward(&d, None, ForwardMode::DeployPriorSample, &mut seeded(2 * seed)).unwrap();
            let b = s.forward(&d, None, ForwardMode::DeployPriorSample, &mut seeded(2 * seed + 1)).unwrap();
            if a.action != b.action {
                distinct += 1;
            }
        }
        assert_eq!(distinct, 100);
    }

    #[test]
    fn train_mode_requires_oracle() {
        let (_, s) = tiny(StudentArch::Cvae, true, false);
        let d = vec![vec![0.0; s.deploy_dim()]];
        assert!(s.forward(&d, None, ForwardMode::Train, &mut seeded(0)).is_err());
    }

    #[test]
    fn zero_beta_total_is_action_loss() {
        let (_, s) = tiny(StudentArch::Cvae, true, false);
        let b = random_batch(&s, 8, 4);
        let loss = s.loss(&b, 0.0, &batch_noise(8, 4, &mut seeded(0))).unwrap();
        assert!(loss.l_kl > 0.0);
        assert_eq!(loss.total, loss.l_action);
        let loss = s.loss(&b, 0.5, &batch_noise(8, 4, &mut seeded(0))).unwrap();
        assert_eq!(loss.total, loss.l_action + 0.5 * loss.l_kl);
    }

    #[test]
    fn linear_toy_teacher_is_matched_at_start() {
        // Teacher: the linear map a = q. Student: decoder offset head zeroed,
        // so its action is the (linear) skip connection a = q.
        let (_, mut s) = tiny(StudentArch::Cvae, true, false);
        let nj = s.n_joints;
        zero_output_layer(&mut s.decoder, 0..nj);
        let mut b = random_batch(&s, 32, 7);
        b.labels = b.q.clone();
        let loss = s.loss(&b, 0.0, &batch_noise(32, 4, &mut seeded(1))).unwrap();
        assert_eq!(loss.l_action, 0.0);
    }

    #[test]
    fn decoder_sees_no_goal_by_default() {
        let (m, s) = tiny(StudentArch::Cvae, true, false);
        let p = s.obs.history * DeployObsConfig::step_dim(&m);
        assert_eq!(s.decoder_input_dim(), p + s.latent_dim());
        let (_, e) = tiny(StudentArch::Cvae, true, true);
        assert_eq!(e.decoder_input_dim(), p + e.goal_dim + e.latent_dim());
        let def = StudentPolicy::new(&m, DeployObsConfig::default(), CvaeNetConfig::default(), 0).unwrap();
        assert_eq!(def.decoder_input_dim(), 25 * 24 + 64);
    }

    fn fd_check(s: &StudentPolicy, beta: f64) {
        let b = random_batch(s, 6, 11);
        let eps = batch_noise(6, s.latent_dim(), &mut seeded(12));
        let (_, g) = s.loss_and_grad(&b, beta, &eps, true).unwrap();
        let p0 = s.params();
        let mut probe = s.clone();
        let h = 1e-5;
        let mut rng = seeded(13);
        for _ in 0..60 {
            let i = rng.random_range(0..p0.len());
            let mut p = p0.clone();
            p[i] += h;
            probe.set_params(&p);
            let up = probe.loss(&b, beta, &eps).unwrap().total;
            p[i] -= 2.0 * h;
            probe.set_params(&p);
            let dn = probe.loss(&b, beta, &eps).unwrap().total;
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-5);
            assert!(err < 1e-4, "param {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&tiny(StudentArch::Cvae, true, false).1, 0.1);
        fd_check(&tiny(StudentArch::Cvae, false, false).1, 0.3);
        fd_check(&tiny(StudentArch::Cvae, true, true).1, 1.0);
        fd_check(&tiny(StudentArch::Mlp, true, false).1, 0.1);
    }

    #[test]
    fn prior_receives_gradient_through_both_paths() {
        let n_prior = |s: &StudentPolicy| s.prior.as_ref().unwrap().n_params();
        let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Residual composition only (β = 0).
        let (_, s) = tiny(StudentArch::Cvae, true, false);
        let b = random_batch(&s, 8, 3);
        let eps = batch_noise(8, 4, &mut seeded(4));
        let (_, g) = s.loss_and_grad(&b, 0.0, &eps, true).unwrap();
        assert!(norm(&g[..n_prior(&s)]) > 1e-8);
        // KL only (no residual path).
        let (_, s) = tiny(StudentArch::Cvae, false, false);
        let (_, g) = s.loss_and_grad(&b, 0.1, &eps, true).unwrap();
        assert!(norm(&g[..n_prior(&s)]) > 1e-8);
        let (_, g0) = s.loss_and_grad(&b, 0.0, &eps, true).unwrap();
        assert_eq!(norm(&g0[..n_prior(&s)]), 0.0);
    }

    #[test]
    fn squared_error_is_gaussian_nll_up_to_a_constant() {
        let mut rng = seeded(5);
        let ls = vec![-0.5 * 2f64.ln(); 7];
        let mut c = None;
        for _ in 0..20 {
            let a: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sq: f64 = a.iter().zip(&mu).map(|(x, y)| (x - y).powi(2)).sum();
            let k = -gauss_log_prob(&a, &mu, &ls) - sq;
            let c0 = *c.get_or_insert(k);
            assert!((k - c0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_, s) = tiny(StudentArch::Cvae, true, false);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("student.json");
        s.save(&p).unwrap();
        assert_eq!(StudentPolicy::load(&p).unwrap(), s);
    }
}
