use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Orthogonal,
    SmallUniform,
}

fn default_output_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input, hidden..., output sizes.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
    pub seed: u64,
    /// Scale of the output layer at initialization (0 gives a zero layer).
    #[serde(default = "default_output_gain")]
    pub output_gain: f64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, init: Init, seed: u64) -> Self {
        MlpSpec { layer_sizes, activation, init, seed, output_gain: 1.0 }
    }

    pub fn with_output_gain(mut self, gain: f64) -> Self {
        self.output_gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least 2 layers of positive size, got {:?}",
                self.layer_sizes
            )));
        }
        if !self.output_gain.is_finite() || self.output_gain < 0.0 {
            return Err(Error::Config("output gain must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of `(weights, bias)` of layer `l` in the flat vector.
    pub fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.layer_sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (off, off + i * o)
    }
}

/// Fully connected network; hidden layers use the configured activation, the
/// output layer is linear. Weight matrices are stored row-major as
/// `out × in`, each followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Activations saved by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer (`inputs[0]` is the network input).
    inputs: Vec<Array2<f64>>,
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let rdiag = qr.r();
    for j in 0..c {
        if rdiag[(j, j)] < 0.0 {
            for i in 0..r {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if tall { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(spec.seed);
        let mut params = vec![0.0; spec.n_params()];
        let n = spec.n_layers();
        for l in 0..n {
            let (i, o) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            let gain = if l + 1 == n { spec.output_gain } else { std::f64::consts::SQRT_2 };
            let (w_off, _) = spec.offsets(l);
            let w = match spec.init {
                Init::Orthogonal => orthogonal(o, i, gain, &mut rng),
                Init::SmallUniform => {
                    let s = gain / (i as f64).sqrt();
                    (0..o * i).map(|_| rng.random_range(-s..=s)).collect()
                }
            };
            params[w_off..w_off + o * i].copy_from_slice(&w);
        }
        Ok(Mlp { spec, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, _) = self.spec.offsets(l);
        let (i, o) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
        ArrayView2::from_shape((o, i), &self.params[w..w + o * i]).expect("layout")
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.spec.offsets(l);
        ArrayView1::from(&self.params[b..b + self.spec.layer_sizes[l + 1]])
    }

    fn activate(&self, z: &mut Array2<f64>) {
        match self.spec.activation {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Elu => z.mapv_inplace(|v| if v > 0.0 { v } else { v.exp_m1() }),
        }
    }

    /// Derivative of the activation expressed through its output.
    fn activation_grad(&self, a: f64) -> f64 {
        match self.spec.activation {
            Activation::Tanh => 1.0 - a * a,
            Activation::Elu => {
                if a > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }

    /// Forward pass over a batch (`rows = samples`).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim(), got: x.ncols(), context: "mlp input" });
        }
        let n = self.spec.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut h = x.clone();
        for l in 0..n {
            let mut z = h.dot(&self.weights(l).t());
            z += &self.bias(l);
            if l + 1 < n {
                self.activate(&mut z);
            }
            inputs.push(h);
            h = z;
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Forward pass for one sample.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let (y, _) = self.forward_batch(&xa)?;
        Ok(y.into_raw_vec_and_offset().0)
    }

    /// Backward pass. `grad_out` is ∂L/∂output per sample; parameter
    /// gradients are summed over the batch and added into `grads`. Returns
    /// ∂L/∂input.
    pub fn backward_batch(&self, cache: &MlpCache, grad_out: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        assert_eq!(grads.len(), self.n_params(), "gradient buffer size");
        let n = self.spec.n_layers();
        let mut g = grad_out.clone();
        for l in (0..n).rev() {
            let a = &cache.inputs[l];
            let (w_off, b_off) = self.spec.offsets(l);
            let (i, o) = (self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]);
            let dw = g.t().dot(a);
            for (dst, src) in grads[w_off..w_off + o * i].iter_mut().zip(dw.iter()) {
                *dst += src;
            }
            let db = g.sum_axis(Axis(0));
            for (dst, src) in grads[b_off..b_off + o].iter_mut().zip(db.iter()) {
                *dst += src;
            }
            let mut gin = g.dot(&self.weights(l));
            if l > 0 {
                ndarray::Zip::from(&mut gin).and(a).for_each(|gv, &av| *gv *= self.activation_grad(av));
            }
            g = gin;
        }
        g
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.n_params()]
    }
}

/// Stack rows into a batch matrix.
pub fn batch(rows: &[Vec<f64>], dim: usize) -> Array2<f64> {
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        assert_eq!(r.len(), dim);
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), dim), flat).expect("batch layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn net(sizes: &[usize], act: Activation, seed: u64) -> Mlp {
        Mlp::new(MlpSpec::new(sizes.to_vec(), act, Init::Orthogonal, seed)).unwrap()
    }

    /// ∑ c ⊙ f(x) for a fixed random direction `c`.
    fn directional_check(m: &Mlp, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        let (y, cache) = m.forward_batch(x).unwrap();
        let mut g = m.zero_grads();
        let gin = m.backward_batch(&cache, c, &mut g);
        let loss = |p: &Mlp, x: &Array2<f64>| (&p.forward_batch(x).unwrap().0 * c).sum();
        let _ = y;
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..m.n_params() {
            let mut a = m.clone();
            let mut b = m.clone();
            a.params[k] += eps;
            b.params[k] -= eps;
            let fd = (loss(&a, x) - loss(&b, x)) / (2.0 * eps);
            worst = worst.max((fd - g[k]).abs() / (1e-6 + fd.abs().max(g[k].abs())));
        }
        for idx in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_slice_mut().unwrap()[idx] += eps;
            b.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(m, &a) - loss(m, &b)) / (2.0 * eps);
            let an = gin.as_slice().unwrap()[idx];
            worst = worst.max((fd - an).abs() / (1e-6 + fd.abs().max(an.abs())));
        }
        worst
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut m = Mlp::new(MlpSpec::new(vec![3, 5, 2], Activation::Tanh, Init::Orthogonal, 1).with_output_gain(0.0)).unwrap();
        let (_, b) = m.spec.offsets(1);
        m.params[b] = 0.7;
        m.params[b + 1] = -0.2;
        assert_eq!(m.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.7, -0.2]);
    }

    #[test]
    fn single_linear_identity_layer() {
        let mut m = net(&[3, 3], Activation::Tanh, 0);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        for i in 0..3 {
            m.params[i * 3 + i] = 1.0;
        }
        assert_eq!(m.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_dims() {
        let m = net(&[4, 8, 3], Activation::Elu, 3);
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert_eq!(m, net(&[4, 8, 3], Activation::Elu, 3));
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let m = net(&[2, 4, 1], Activation::Tanh, 0);
        let x = array![[0.5, -0.5]];
        let (_, cache) = m.forward_batch(&x).unwrap();
        let mut g = m.zero_grads();
        m.backward_batch(&cache, &array![[0.0]], &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_gradient_is_input() {
        let mut m = net(&[1, 1], Activation::Tanh, 0);
        m.params = vec![2.0, 0.0];
        let x = array![[3.0]];
        let (y, cache) = m.forward_batch(&x).unwrap();
        assert_eq!(y[[0, 0]], 6.0);
        let mut g = m.zero_grads();
        m.backward_batch(&cache, &array![[1.0]], &mut g);
        assert_eq!(g, vec![3.0, 1.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(11);
        for act in [Activation::Tanh, Activation::Elu] {
            let m = net(&[5, 7, 6, 3], act, 5);
            let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.5..1.5));
            let c = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
            let err = directional_check(&m, &x, &c);
            assert!(err < 1e-4, "{act:?}: relative error {err}");
        }
    }

    #[test]
    fn orthogonal_init_is_orthonormal() {
        let m = net(&[6, 4, 9], Activation::Tanh, 2);
        let w = m.weights(0);
        let wwt = w.dot(&w.t());
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 2.0 } else { 0.0 };
                assert!((wwt[[i, j]] - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_degenerate_spec() {
        assert!(Mlp::new(MlpSpec::new(vec![3], Activation::Tanh, Init::Orthogonal, 0)).is_err());
        assert!(Mlp::new(MlpSpec::new(vec![3, 0, 1], Activation::Tanh, Init::Orthogonal, 0)).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = Mlp::new(MlpSpec::new(vec![3, 16, 2], Activation::Elu, Init::SmallUniform, 9)).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: Mlp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(back.params.iter().zip(&m.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
