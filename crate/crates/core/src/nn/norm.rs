//! Running per-dimension observation normalization.

use crate::scalar::Scalar;

const CLIP: f64 = 5.0;
/// Added to the std so near-constant inputs are not blown up.
const EPS: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    /// Frozen statistics ignore [`RunningNorm::update`].
    pub frozen: bool,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges the moments of a row-major batch.
    pub fn update<T: Scalar>(&mut self, x: &[T]) {
        let d = self.dim();
        if self.frozen || x.is_empty() {
            return;
        }
        let n = (x.len() / d) as f64;
        let mut mean = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let e = v.as_f64() - m;
                *s += e * e;
            }
        }
        var.iter_mut().for_each(|s| *s /= n);

        let total = self.count + n;
        for i in 0..d {
            let delta = mean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + var[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        let scale: Vec<f64> = self.var.iter().map(|v| 1.0 / (v.sqrt() + EPS)).collect();
        x.chunks_exact(d)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&scale))
                    .map(|(v, (m, s))| T::lit(((v.as_f64() - m) * s).clamp(-CLIP, CLIP)))
            })
            .collect()
    }
}
