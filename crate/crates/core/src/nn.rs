//! Fully connected network with ELU hidden activations, batched through
//! `sgemm`, plus an Adam optimizer over the flat parameter vector.
//!
//! Layout: for each layer, the weight matrix `in x out` (row-major) followed
//! by the bias `out`. Inputs are row-major batches `n x in`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    pub params: Vec<f32>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    pub batch: usize,
    /// `layers[0]` is the input; `layers[l]` is the (post-activation) output of layer `l`.
    pub layers: Vec<Vec<f32>>,
}

impl Cache {
    pub fn output(&self) -> &[f32] {
        self.layers.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

#[inline]
fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output.
#[inline]
fn elu_grad_from_output(y: f32) -> f32 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// `c = a * b (+ c if accumulate)`, all row-major, `a: m x k`, `b: k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // strides for a logical (m x k) view of `a`, stored either as m x k or k x m
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count_for(sizes)] }
    }

    /// Uniform fan-in initialization with zero biases; the last layer is
    /// scaled by `out_scale`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], out_scale: f32, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let n_layers = net.n_layers();
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
            if l + 1 == n_layers {
                bound *= out_scale;
            }
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = dist.sample(rng);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for i in 0..l {
            off += self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!("bad layer sizes {:?}", self.sizes)));
        }
        let expected = Self::param_count_for(&self.sizes);
        if self.params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: self.params.len() });
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite weights".into()));
        }
        Ok(())
    }

    /// Batched forward pass keeping intermediate activations.
    pub fn forward(&self, input: &[f32], batch: usize) -> Result<Cache> {
        let d_in = self.input_dim();
        if input.len() != batch * d_in {
            return Err(Error::DimensionMismatch { expected: batch * d_in, got: input.len() });
        }
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        let n_layers = self.n_layers();
        for l in 0..n_layers {
            let (w_off, b_off) = self.offsets(l);
            let (din, dout) = (self.sizes[l], self.sizes[l + 1]);
            let mut y = vec![0.0f32; batch * dout];
            let bias = &self.params[b_off..b_off + dout];
            for row in y.chunks_exact_mut(dout) {
                row.copy_from_slice(bias);
            }
            gemm(batch, din, dout, &layers[l], false, &self.params[w_off..b_off], false, &mut y, true);
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = elu(*v));
            }
            layers.push(y);
        }
        Ok(Cache { batch, layers })
    }

    pub fn predict(&self, input: &[f32], batch: usize) -> Result<Vec<f32>> {
        Ok(self.forward(input, batch)?.layers.pop().unwrap_or_default())
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &Cache, grad_output: &[f32], grad: &mut [f32]) {
        let n = cache.batch;
        let n_layers = self.n_layers();
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(grad_output.len(), n * self.output_dim());
        let mut delta = grad_output.to_vec();
        for l in (0..n_layers).rev() {
            let (w_off, b_off) = self.offsets(l);
            let (din, dout) = (self.sizes[l], self.sizes[l + 1]);
            let x = &cache.layers[l];
            // dW += X^T delta
            gemm(din, n, dout, x, true, &delta, false, &mut grad[w_off..b_off], true);
            let gb = &mut grad[b_off..b_off + dout];
            for row in delta.chunks_exact(dout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0f32; n * din];
                gemm(n, dout, din, &delta, false, &self.params[w_off..b_off], true, &mut prev, false);
                for (p, y) in prev.iter_mut().zip(x) {
                    *p *= elu_grad_from_output(*y);
                }
                delta = prev;
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Gradient-descent step on `params`.
    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Scale `grad` in place so its Euclidean norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f32], max_norm: f32) -> f32 {
    let norm = grad.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_closed_form() {
        // 21 -> 256 -> 256 -> 256 -> 4
        assert_eq!(Mlp::param_count_for(&[21, 256, 256, 256, 4]), 5632 + 65792 + 65792 + 1028);
        assert_eq!(Mlp::param_count_for(&[2, 3]), 9);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[3, 5, 4, 2], 1.0, &mut rng);
        let x: Vec<f32> = (0..6).map(|i| (i as f32 * 0.37).sin()).collect();
        let out = net.predict(&x, 2).unwrap();
        for b in 0..2 {
            let mut h: Vec<f32> = x[b * 3..b * 3 + 3].to_vec();
            for l in 0..3 {
                let (w_off, b_off) = net.offsets(l);
                let (din, dout) = (net.sizes[l], net.sizes[l + 1]);
                let mut y = net.params[b_off..b_off + dout].to_vec();
                for j in 0..dout {
                    for i in 0..din {
                        y[j] += h[i] * net.params[w_off + i * dout + j];
                    }
                }
                if l < 2 {
                    y.iter_mut().for_each(|v| *v = elu(*v));
                }
                h = y;
            }
            for j in 0..2 {
                assert!((out[b * 2 + j] - h[j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[3, 6, 5, 2], 1.0, &mut rng);
        let x: Vec<f32> = (0..12).map(|i| ((i * 7) as f32 * 0.31).cos()).collect();
        // loss = sum(out * c)
        let c: Vec<f32> = (0..8).map(|i| 0.5 - 0.1 * i as f32).collect();
        let loss = |n: &Mlp| -> f64 {
            n.predict(&x, 4).unwrap().iter().zip(&c).map(|(o, c)| (*o as f64) * (*c as f64)).sum()
        };
        let cache = net.forward(&x, 4).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.backward(&cache, &c, &mut g);
        let h = 1e-2f32;
        for i in (0..net.param_count()).step_by(3) {
            let mut p = net.clone();
            p.params[i] += h;
            let lp = loss(&p);
            p.params[i] -= 2.0 * h;
            let lm = loss(&p);
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - g[i] as f64).abs() < 2e-3 * fd.abs().max(1.0), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 2]);
        assert!(matches!(net.forward(&[0.0; 5], 2), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0f32, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }

    #[test]
    fn grad_clipping() {
        let mut g = vec![3.0f32, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
        let mut small = vec![0.1f32];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1]);
    }
}
