use serde::{Deserialize, Serialize};

/// Running mean/variance of observation features, used to whiten network
/// inputs. Statistics are merged batch-wise (Chan et al.), so the result
/// depends only on the sequence of batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    /// Normalized values are clipped to ±clip.
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm { mean: vec![0.0; dim], var: vec![1.0; dim], count: 0.0, clip: 10.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, rows: &[Vec<f64>]) {
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        let d = self.dim();
        let mut bm = vec![0.0; d];
        for r in rows {
            for (m, v) in bm.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut bv = vec![0.0; d];
        for r in rows {
            for i in 0..d {
                bv[i] += (r[i] - bm[i]).powi(2) / n;
            }
        }
        if self.count == 0.0 {
            self.mean = bm;
            self.var = bv;
            self.count = n;
            return;
        }
        let total = self.count + n;
        for i in 0..d {
            let delta = bm[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bv[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0.0 {
            return x.to_vec();
        }
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| ((x - m) / (v + 1e-8).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_updates_match_full_statistics() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i as f64 * 0.3).sin()]).collect();
        let mut a = RunningNorm::new(2);
        a.update(&rows[..17]);
        a.update(&rows[17..40]);
        a.update(&rows[40..]);
        let mut b = RunningNorm::new(2);
        b.update(&rows);
        for i in 0..2 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-12);
            assert!((a.var[i] - b.var[i]).abs() < 1e-10);
        }
        assert_eq!(a.count, 50.0);
    }

    #[test]
    fn fresh_norm_is_identity() {
        let n = RunningNorm::new(3);
        assert_eq!(n.normalize(&[0.5, -1.0, 2.0]), vec![0.5, -1.0, 2.0]);
    }
}
