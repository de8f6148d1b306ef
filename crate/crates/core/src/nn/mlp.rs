//! Dense ELU networks with a recorded forward pass and exact backward pass.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

#[inline]
pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        x.exp()
    }
}

/// Fully connected layer, `W` stored `n_out x n_in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![T::zero(); n_in * n_out],
            b: vec![T::zero(); n_out],
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal(n_in: usize, n_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let (r, c) = (n_out.max(n_in), n_out.min(n_in));
        let a = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let mut q = qr.q();
        let rd = qr.r();
        for j in 0..c {
            if rd[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        // q is r x c with orthonormal columns; W must be n_out x n_in
        let w = if n_out >= n_in { q } else { q.transpose() };
        let mut out = Self::zeros(n_in, n_out);
        for i in 0..n_out {
            for j in 0..n_in {
                out.w[i * n_in + j] = T::lit(gain * w[(i, j)]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Values recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub batch: usize,
    /// Input of every layer (activations of the previous one).
    inputs: Vec<Vec<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<T>>,
    pub out: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes = [n_in, hidden.., n_out]`. Hidden layers use gain sqrt(2),
    /// the output layer `out_gain`.
    pub fn new(sizes: &[usize], out_gain: f64, rng: &mut impl Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let gain = if l + 1 == n { out_gain } else { std::f64::consts::SQRT_2 };
                Dense::orthogonal(sizes[l], sizes[l + 1], gain, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|d| Dense::zeros(d.n_in, d.n_out)).collect(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_in()];
        s.extend(self.layers.iter().map(|d| d.n_out));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|d| d.w.len() + d.b.len()).sum()
    }

    /// Row-major batch of inputs, `batch x n_in`.
    pub fn forward(&self, x: &[T], batch: usize) -> MlpCache<T> {
        assert_eq!(x.len(), batch * self.n_in(), "mlp input size");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.to_vec();
        for (l, d) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(batch * d.n_out);
            for _ in 0..batch {
                z.extend_from_slice(&d.b);
            }
            T::gemm(
                batch,
                d.n_in,
                d.n_out,
                T::one(),
                &cur,
                d.n_in as isize,
                1,
                &d.w,
                1,
                d.n_in as isize,
                T::one(),
                &mut z,
                d.n_out as isize,
                1,
            );
            inputs.push(cur);
            if l + 1 < self.layers.len() {
                cur = z.iter().map(|&v| elu(v)).collect();
                pre.push(z);
            } else {
                cur = z;
            }
        }
        MlpCache {
            batch,
            inputs,
            pre,
            out: cur,
        }
    }

    /// Inference only.
    pub fn apply(&self, x: &[T], batch: usize) -> Vec<T> {
        self.forward(x, batch).out
    }

    /// Accumulates parameter gradients of `sum(d_out * out)` into `grad`
    /// and returns the gradient with respect to the input when asked.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], grad: &mut Mlp<T>, want_input: bool) -> Option<Vec<T>> {
        let batch = cache.batch;
        let mut dz = d_out.to_vec();
        let mut d_in = None;
        for l in (0..self.layers.len()).rev() {
            let d = &self.layers[l];
            let g = &mut grad.layers[l];
            let x = &cache.inputs[l];
            T::gemm(
                d.n_out,
                batch,
                d.n_in,
                T::one(),
                &dz,
                1,
                d.n_out as isize,
                x,
                d.n_in as isize,
                1,
                T::one(),
                &mut g.w,
                d.n_in as isize,
                1,
            );
            for row in dz.chunks_exact(d.n_out) {
                for (gb, v) in g.b.iter_mut().zip(row) {
                    *gb += *v;
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let mut dx = vec![T::zero(); batch * d.n_in];
            T::gemm(
                batch,
                d.n_out,
                d.n_in,
                T::one(),
                &dz,
                d.n_out as isize,
                1,
                &d.w,
                d.n_in as isize,
                1,
                T::zero(),
                &mut dx,
                d.n_in as isize,
                1,
            );
            if l > 0 {
                for (v, z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    *v *= elu_grad(*z);
                }
                dz = dx;
            } else {
                d_in = Some(dx);
            }
        }
        d_in
    }

    /// Parameter slices in a fixed order: per layer `w` then `b`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (l, d) in self.layers.iter().enumerate() {
            out.push((format!("l{l}.w"), vec![d.n_out, d.n_in], d.w.as_slice()));
            out.push((format!("l{l}.b"), vec![d.n_out], d.b.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for d in &mut self.layers {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elu_derivative_at_minus_one() {
        assert!((elu_grad(-1.0f64) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(elu(2.0f64), 2.0);
        assert!((elu(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n_in, n_out) in [(7, 3), (3, 7), (5, 5)] {
            let d = Dense::<f64>::orthogonal(n_in, n_out, 1.0, &mut rng);
            let w = DMatrix::from_row_slice(n_out, n_in, &d.w);
            let g = if n_out >= n_in { w.transpose() * &w } else { &w * w.transpose() };
            let k = g.nrows();
            assert!((g - DMatrix::identity(k, k)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn toy_net_matches_hand_evaluation() {
        // 2-2-1 with hand-picked weights
        let net = Mlp {
            layers: vec![
                Dense {
                    n_in: 2,
                    n_out: 2,
                    w: vec![1.0, -2.0, 0.5, 0.25],
                    b: vec![0.1, -0.3],
                },
                Dense {
                    n_in: 2,
                    n_out: 1,
                    w: vec![1.5, -1.0],
                    b: vec![0.2],
                },
            ],
        };
        let x = [0.4, 0.7];
        let h0 = 0.4 - 1.4 + 0.1;
        let h1 = 0.2 + 0.175 - 0.3;
        let expect = 1.5 * (f64::exp(h0) - 1.0) - h1 + 0.2;
        let y = net.apply(&x, 1);
        assert!((y[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f64>::new(&[4, 6, 2], 1.0, &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let all = net.apply(&x, 3);
        for r in 0..3 {
            assert_eq!(net.apply(&x[4 * r..4 * r + 4], 1), all[2 * r..2 * r + 2].to_vec());
        }
    }
}
