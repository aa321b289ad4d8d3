use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, hyper: AdamHyper) -> Self {
        Adam { hyper, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam parameter count");
        assert_eq!(grads.len(), self.m.len(), "adam gradient count");
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Rescale `grads` in place so its global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut a = Adam::new(2, AdamHyper::default());
        a.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let hyper = AdamHyper { lr: 0.01, ..Default::default() };
        let mut p = vec![0.5];
        let mut a = Adam::new(1, hyper);
        a.step(&mut p, &[3.7]);
        assert!((p[0] - (0.5 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let hyper = AdamHyper { lr: 1e-2, ..Default::default() };
        let mut w = vec![1.0];
        let mut a = Adam::new(1, hyper);
        for _ in 0..500 {
            let g = 2.0 * w[0];
            a.step(&mut w, &[g]);
        }
        assert!(w[0].abs() < 1e-3, "{}", w[0]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut h = vec![0.1];
        clip_grad_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.1]);
    }
}
