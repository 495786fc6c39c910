//! Small dense perceptrons with hand-derived gradients, and the optimizers
//! that update them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network with `tanh` hidden layers and a linear output.
///
/// Parameters live in one flat vector. Layer `l` stores its weights
/// input-major (`w[j*out + o]` connects input `j` to output `o`) followed
/// by `out` biases. With no hidden layers the network is a plain affine map,
/// which on one-hot inputs is a lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_trace`]: `acts[0]` is the input,
/// `acts[l+1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Uniform init with variance `gain²/fan_in`; `hidden_gain` for hidden
    /// layers, `output_gain` for the last layer, zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers {
                output_gain
            } else {
                hidden_gain
            };
            let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if bound > 0.0 {
                    rng.gen_range(-bound..bound)
                } else {
                    0.0
                });
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count(sizes)],
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(sizes);
        if params.len() != expected {
            return Err(Error::Dimension {
                context: "MLP parameters",
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rewrites the output layer so every output `o` becomes
    /// `scale·o + shift[o]` for all inputs.
    pub fn rescale_output(&mut self, scale: f64, shift: &[f64]) {
        let l = self.sizes.len() - 2;
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        debug_assert_eq!(shift.len(), fan_out);
        let off = self.params.len() - fan_in * fan_out - fan_out;
        for w in &mut self.params[off..off + fan_in * fan_out] {
            *w *= scale;
        }
        for (b, s) in self.params[off + fan_in * fan_out..].iter_mut().zip(shift) {
            *b = *b * scale + s;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "MLP input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn layer(&self, input: &[f64], l: usize, offset: usize, out: &mut Vec<f64>) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + fan_in * fan_out];
        let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        out.clear();
        out.extend_from_slice(b);
        for (j, &xj) in input.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = &w[j * fan_out..(j + 1) * fan_out];
            for (o, wv) in out.iter_mut().zip(col) {
                *o += wv * xj;
            }
        }
        if l + 2 < self.sizes.len() {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        for l in 0..self.sizes.len() - 1 {
            self.layer(&cur, l, offset, &mut next);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..self.sizes.len() - 1 {
            let mut out = Vec::with_capacity(self.sizes[l + 1]);
            self.layer(&acts[l], l, offset, &mut out);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    /// Accumulates `∂(d_outᵀ·output)/∂params` into `grad`.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &trace.acts[l];
            for (j, &xj) in input.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                let g = &mut grad[off + j * fan_out..off + (j + 1) * fan_out];
                for (gv, d) in g.iter_mut().zip(&delta) {
                    *gv += xj * d;
                }
            }
            let gb = &mut grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            for (gv, d) in gb.iter_mut().zip(&delta) {
                *gv += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for (j, p) in prev.iter_mut().enumerate() {
                    let col = &w[j * fan_out..(j + 1) * fan_out];
                    let s: f64 = col.iter().zip(&delta).map(|(a, b)| a * b).sum();
                    // tanh'(z) = 1 − tanh(z)²
                    *p = s * (1.0 - input[j] * input[j]);
                }
                delta = prev;
            }
        }
    }
}

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
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

/// First-order update rule. `step` always descends along `grad`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(Adam::new(lr))
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(a) => a.lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(a) => {
                if a.m.len() != params.len() {
                    a.m = vec![0.0; params.len()];
                    a.v = vec![0.0; params.len()];
                    a.t = 0;
                }
                if a.lr == 0.0 {
                    return;
                }
                a.t += 1;
                let bc1 = 1.0 - a.beta1.powi(a.t as i32);
                let bc2 = 1.0 - a.beta2.powi(a.t as i32);
                for i in 0..params.len() {
                    a.m[i] = a.beta1 * a.m[i] + (1.0 - a.beta1) * grad[i];
                    a.v[i] = a.beta2 * a.v[i] + (1.0 - a.beta2) * grad[i] * grad[i];
                    let mhat = a.m[i] / bc1;
                    let vhat = a.v[i] / bc2;
                    params[i] -= a.lr * mhat / (vhat.sqrt() + a.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct matrix arithmetic, independent of the input-major layout tricks.
    fn reference_forward(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let mut next = vec![0.0; o];
            for (k, nk) in next.iter_mut().enumerate() {
                let mut s = params[off + i * o + k];
                for j in 0..i {
                    s += params[off + j * o + k] * cur[j];
                }
                *nk = if l + 2 < sizes.len() { s.tanh() } else { s };
            }
            off += i * o + o;
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[3, 4, 1]);
        assert_eq!(m.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn linear_map_on_one_hot_is_lookup() {
        // 3 inputs, 1 output: weights (2, 5, 7), bias 0
        let m = Mlp::from_params(&[3, 1], vec![2.0, 5.0, 7.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[0.0, 1.0, 0.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sizes in [vec![4, 8, 3], vec![5, 6, 6, 2], vec![3, 1]] {
            let m = Mlp::new(&sizes, 1.0, 1.0, &mut rng);
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = m.forward(&x).unwrap();
            let want = reference_forward(&sizes, m.params(), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sizes = [4, 7, 5, 3];
        let m = Mlp::new(&sizes, 1.0, 1.0, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let trace = m.forward_trace(&x).unwrap();
        let mut grad = vec![0.0; m.params().len()];
        m.backward(&trace, &w, &mut grad);
        let h = 1e-5;
        for k in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[k] += h;
            let mut minus = m.clone();
            minus.params_mut()[k] -= h;
            let f = |n: &Mlp| -> f64 {
                n.forward(&x)
                    .unwrap()
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-3),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = Mlp::zeros(&[3, 1]);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sgd_and_adam_descend() {
        let mut p = vec![1.0];
        Optimizer::sgd(0.1).step(&mut p, &[2.0]);
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut adam = Optimizer::adam(0.01);
        let mut p = vec![1.0];
        adam.step(&mut p, &[5.0]);
        // first Adam step moves by lr·sign(g)
        assert!((p[0] - 0.99).abs() < 1e-9);
    }
}
