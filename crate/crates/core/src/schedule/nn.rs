//! Small dense networks with tanh hidden layers, manual backprop and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network: tanh on hidden layers, linear output.
///
/// Parameters are one flat vector, layer by layer: weights (row-major,
/// out × in) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations retained from a forward pass, input included.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// Uniform Glorot initialization; the output layer is scaled by `out_gain`.
    pub fn new<R: Rng>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::count(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l == last { out_gain } else { 1.0 };
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.sizes[0], "input size");
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(x.to_vec());
        let mut offset = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &layers[l];
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    b[o] + w[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(input)
                        .map(|(a, c)| a * c)
                        .sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(out);
            offset += n_in * n_out + n_out;
        }
        ForwardCache { layers }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).layers.pop().unwrap()
    }

    /// Adds ∂L/∂θ to `grad` given ∂L/∂output.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.layers[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    prev.iter_mut()
                        .zip(&w[o * n_in..(o + 1) * n_in])
                        .for_each(|(p, w)| *p += d * w);
                }
            }
            // input to layer l is tanh output of layer l-1
            prev.iter_mut()
                .zip(input)
                .for_each(|(p, h)| *p *= 1.0 - h * h);
            delta = prev;
        }
    }
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Gradient descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[4, 6, 5, 3], 1.0, &mut rng);
        let x = [0.3, -0.7, 0.1, 0.9];
        let c = [0.5, -1.0, 2.0];
        let loss = |n: &Mlp| {
            n.predict(&x)
                .iter()
                .zip(&c)
                .map(|(o, c)| c * o.sin())
                .sum::<f64>()
        };
        let cache = net.forward(&x);
        let d_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(&c)
            .map(|(o, c)| c * o.cos())
            .collect();
        let mut grad = vec![0.0; net.params().len()];
        net.backward(&cache, &d_out, &mut grad);
        let h = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net);
            net.params_mut()[i] = orig - h;
            let down = loss(&net);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "param {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)];
            opt.step(&mut x, &g);
        }
        assert!(
            (x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3,
            "{x:?}"
        );
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let s: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
