//! Diagonal Gaussians parameterized by mean and log standard deviation.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_7;

pub fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    /// Always within `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Vec<f64>,
    /// Whether `log_std` is an output of the network (vs a free parameter).
    pub state_dependent: bool,
}

impl GaussianHead {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>, state_dependent: bool) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: log_std.len(), context: "gaussian log_std" });
        }
        if log_std.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("log_std must not be NaN"));
        }
        Ok(GaussianHead { mean, log_std: log_std.into_iter().map(clamp_log_std).collect(), state_dependent })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        gauss_log_prob(x, &self.mean, &self.log_std)
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + HALF_LOG_TAU + 0.5).sum()
    }
}

/// Draw `mean + exp(log_std) ⊙ ε` with `ε ~ N(0, I)`; the noise is returned
/// so the sample can be replayed for pathwise gradients.
pub fn sample_reparam(head: &GaussianHead, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let noise: Vec<f64> = (0..head.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let sample = head.mean.iter().zip(&head.log_std).zip(&noise).map(|((m, l), e)| m + l.exp() * e).collect();
    (sample, noise)
}

pub fn gauss_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), l)| {
            let z = (x - m) * (-l).exp();
            -0.5 * z * z - l - HALF_LOG_TAU
        })
        .sum()
}

/// Log-density with its gradients with respect to mean and log_std.
pub fn gauss_log_prob_grad(x: &[f64], mean: &[f64], log_std: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut lp = 0.0;
    let mut dm = Vec::with_capacity(x.len());
    let mut dl = Vec::with_capacity(x.len());
    for ((x, m), l) in x.iter().zip(mean).zip(log_std) {
        let inv = (-l).exp();
        let z = (x - m) * inv;
        lp += -0.5 * z * z - l - HALF_LOG_TAU;
        dm.push(z * inv);
        dl.push(z * z - 1.0);
    }
    (lp, dm, dl)
}

/// KL(N(μ₁, σ₁²) ‖ N(μ₂, σ₂²)) summed over dimensions, in nats.
pub fn kl_diag_gauss(mu1: &[f64], s1: &[f64], mu2: &[f64], s2: &[f64]) -> Result<f64> {
    let n = mu1.len();
    if s1.len() != n || mu2.len() != n || s2.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s1.len().min(mu2.len()).min(s2.len()), context: "kl" });
    }
    if s1.iter().chain(s2).any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("standard deviations must be > 0"));
    }
    let mut kl = 0.0;
    for i in 0..n {
        let d = mu1[i] - mu2[i];
        kl += (s2[i] / s1[i]).ln() + (s1[i] * s1[i] + d * d) / (2.0 * s2[i] * s2[i]) - 0.5;
    }
    Ok(kl.max(0.0))
}

/// Gradients of the KL with respect to both heads in log-std form.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGrad {
    pub d_mu1: Vec<f64>,
    pub d_log_s1: Vec<f64>,
    pub d_mu2: Vec<f64>,
    pub d_log_s2: Vec<f64>,
}

/// KL in log-std parameterization with analytic gradients. Unlike
/// [`kl_diag_gauss`] the value is not clamped at 0, so it stays smooth.
pub fn kl_diag_gauss_grad(mu1: &[f64], log_s1: &[f64], mu2: &[f64], log_s2: &[f64]) -> (f64, KlGrad) {
    let n = mu1.len();
    let mut kl = 0.0;
    let mut g = KlGrad { d_mu1: vec![0.0; n], d_log_s1: vec![0.0; n], d_mu2: vec![0.0; n], d_log_s2: vec![0.0; n] };
    for i in 0..n {
        let d = mu1[i] - mu2[i];
        let inv_v2 = (-2.0 * log_s2[i]).exp();
        let ratio = (2.0 * (log_s1[i] - log_s2[i])).exp();
        kl += log_s2[i] - log_s1[i] + 0.5 * (ratio + d * d * inv_v2) - 0.5;
        g.d_mu1[i] = d * inv_v2;
        g.d_mu2[i] = -d * inv_v2;
        g.d_log_s1[i] = ratio - 1.0;
        g.d_log_s2[i] = 1.0 - ratio - d * d * inv_v2;
    }
    (kl, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    /// ∫ p log(p/q) for one dimension by composite Simpson on ±12σ₁.
    fn kl_quadrature_1d(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
        let n = 20_000;
        let (a, b) = (m1 - 12.0 * s1, m1 + 12.0 * s1);
        let h = (b - a) / n as f64;
        let logpdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - HALF_LOG_TAU;
        let f = |x: f64| {
            let lp = logpdf(x, m1, s1);
            lp.exp() * (lp - logpdf(x, m2, s2))
        };
        let mut sum = f(a) + f(b);
        for i in 1..n {
            sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    #[test]
    fn kl_known_values() {
        assert_eq!(kl_diag_gauss(&[0.3], &[0.7], &[0.3], &[0.7]).unwrap(), 0.0);
        assert!((kl_diag_gauss(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_diag_gauss(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(kl_diag_gauss(&[0.0], &[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kl_matches_quadrature() {
        let mut rng = seeded(5);
        for _ in 0..100 {
            let mut mu1 = [0.0; 4];
            let mut s1 = [0.0; 4];
            let mut mu2 = [0.0; 4];
            let mut s2 = [0.0; 4];
            for i in 0..4 {
                mu1[i] = rng.random_range(-1.0..1.0);
                mu2[i] = rng.random_range(-1.0..1.0);
                s1[i] = rng.random_range(0.3..1.5);
                s2[i] = rng.random_range(0.3..1.5);
            }
            let oracle: f64 = (0..4).map(|i| kl_quadrature_1d(mu1[i], s1[i], mu2[i], s2[i])).sum();
            let kl = kl_diag_gauss(&mu1, &s1, &mu2, &s2).unwrap();
            assert!((kl - oracle).abs() < 1e-6, "{kl} vs {oracle}");
        }
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mu1 = [0.2, -0.4];
        let l1 = [-0.3, 0.1];
        let mu2 = [0.5, 0.0];
        let l2 = [0.2, -0.6];
        let (_, g) = kl_diag_gauss_grad(&mu1, &l1, &mu2, &l2);
        let eps = 1e-6;
        let f = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| kl_diag_gauss_grad(a, b, c, d).0;
        for i in 0..2 {
            let bump = |v: &[f64; 2], s: f64| {
                let mut w = *v;
                w[i] += s;
                w
            };
            let fd = (f(&bump(&mu1, eps), &l1, &mu2, &l2) - f(&bump(&mu1, -eps), &l1, &mu2, &l2)) / (2.0 * eps);
            assert!((fd - g.d_mu1[i]).abs() < 1e-7);
            let fd = (f(&mu1, &bump(&l1, eps), &mu2, &l2) - f(&mu1, &bump(&l1, -eps), &mu2, &l2)) / (2.0 * eps);
            assert!((fd - g.d_log_s1[i]).abs() < 1e-7);
            let fd = (f(&mu1, &l1, &bump(&mu2, eps), &l2) - f(&mu1, &l1, &bump(&mu2, -eps), &l2)) / (2.0 * eps);
            assert!((fd - g.d_mu2[i]).abs() < 1e-7);
            let fd = (f(&mu1, &l1, &mu2, &bump(&l2, eps)) - f(&mu1, &l1, &mu2, &bump(&l2, -eps))) / (2.0 * eps);
            assert!((fd - g.d_log_s2[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let x = [0.3, -1.2];
        let m = [0.1, 0.4];
        let l = [-0.5, 0.3];
        let (lp, dm, dl) = gauss_log_prob_grad(&x, &m, &l);
        assert!((lp - gauss_log_prob(&x, &m, &l)).abs() < 1e-15);
        let eps = 1e-6;
        for i in 0..2 {
            let mut a = m;
            let mut b = m;
            a[i] += eps;
            b[i] -= eps;
            let fd = (gauss_log_prob(&x, &a, &l) - gauss_log_prob(&x, &b, &l)) / (2.0 * eps);
            assert!((fd - dm[i]).abs() < 1e-7);
            let mut a = l;
            let mut b = l;
            a[i] += eps;
            b[i] -= eps;
            let fd = (gauss_log_prob(&x, &m, &a) - gauss_log_prob(&x, &m, &b)) / (2.0 * eps);
            assert!((fd - dl[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn clamped_head_samples_near_mean() {
        let head = GaussianHead::new(vec![1.5, -2.0], vec![-1e9, f64::NEG_INFINITY], true).unwrap();
        assert_eq!(head.log_std, vec![LOG_STD_MIN; 2]);
        let (s, _) = sample_reparam(&head, &mut seeded(0));
        // ±10 σ at the lower clamp.
        for (a, b) in s.iter().zip(&head.mean) {
            assert!((a - b).abs() < 10.0 * (-5.0f64).exp());
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let head = GaussianHead::new(vec![0.0; 3], vec![0.0; 3], false).unwrap();
        assert_eq!(sample_reparam(&head, &mut seeded(4)), sample_reparam(&head, &mut seeded(4)));
    }

    #[test]
    fn monte_carlo_moments() {
        let head = GaussianHead::new(vec![0.0], vec![0.0], false).unwrap();
        let mut rng = seeded(42);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_reparam(&head, &mut rng).0[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 0.02);
        assert!((0.98..=1.02).contains(&std));
    }

    #[test]
    fn replayed_noise_gives_unit_mean_gradient() {
        let head = GaussianHead::new(vec![0.3, -0.7], vec![-0.2, 0.4], true).unwrap();
        let (s, noise) = sample_reparam(&head, &mut seeded(8));
        let eps = 1e-6;
        for i in 0..2 {
            let mut h = head.clone();
            h.mean[i] += eps;
            let replay: Vec<f64> =
                h.mean.iter().zip(&h.log_std).zip(&noise).map(|((m, l), e)| m + l.exp() * e).collect();
            assert!(((replay[i] - s[i]) / eps - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_self(
            mu1 in proptest::collection::vec(-3.0f64..3.0, 3),
            mu2 in proptest::collection::vec(-3.0f64..3.0, 3),
            s1 in proptest::collection::vec(0.05f64..3.0, 3),
            s2 in proptest::collection::vec(0.05f64..3.0, 3),
        ) {
            prop_assert!(kl_diag_gauss(&mu1, &s1, &mu2, &s2).unwrap() >= 0.0);
            prop_assert_eq!(kl_diag_gauss(&mu1, &s1, &mu1, &s1).unwrap(), 0.0);
        }

        #[test]
        fn log_std_clamp_is_idempotent(v in -100.0f64..100.0) {
            let once = clamp_log_std(v);
            prop_assert_eq!(clamp_log_std(once), once);
            prop_assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&once));
        }
    }
}
