//! Dense feed-forward networks over a flat parameter vector, with exact
//! reverse-mode gradients, plus the Adam optimizer.
//!
//! Batches are column-major: one sample per column.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(z),
            Activation::Silu => z * crate::special::sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z` whose image is `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let s = crate::special::sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// `tanh` through a single `exp`; cheaper than libm's.
fn fast_tanh(z: f64) -> f64 {
    if z.abs() > 20.0 {
        return z.signum();
    }
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

// Products with very few output rows are far faster as transposed
// matrix-vector products.
const THIN: usize = 4;

fn weight_times(w: &DMatrixView<'_, f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    if w.nrows() <= THIN {
        h.tr_mul(&w.transpose()).transpose()
    } else {
        w * h
    }
}

fn outer_sum(delta: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    if delta.nrows() <= THIN {
        (h * delta.transpose()).transpose()
    } else {
        delta * h.transpose()
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &[f64]) {
    for col in z.as_mut_slice().chunks_exact_mut(b.len()) {
        for (v, bi) in col.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

/// Multilayer perceptron with hidden activations and a linear output layer.
///
/// Layer `k` stores its weight matrix (column-major, `out × in`) followed by
/// its bias inside [`Mlp::params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values kept by [`Mlp::forward_tape`] for the backward pass.
pub struct Tape {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization from a seeded stream.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        check_len(Self::count(&sizes), params.len())?;
        Ok(Mlp {
            sizes,
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
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

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, k: usize, off: usize) -> (DMatrixView<'_, f64>, &[f64], usize) {
        let (i, o) = (self.sizes[k], self.sizes[k + 1]);
        let w = DMatrixView::from_slice(&self.params[off..off + o * i], o, i);
        let b = &self.params[off + o * i..off + o * i + o];
        (w, b, off + o * i + o)
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.input_dim(), x.nrows())?;
        let n_layers = self.sizes.len() - 1;
        let mut h = x.clone();
        let mut off = 0;
        for k in 0..n_layers {
            let (w, b, next) = self.layer(k, off);
            off = next;
            let mut z = weight_times(&w, &h);
            add_bias(&mut z, b);
            if k + 1 < n_layers {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        check_len(self.input_dim(), x.nrows())?;
        let n_layers = self.sizes.len() - 1;
        let mut tape = Tape {
            inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_layers),
        };
        let mut h = x.clone();
        let mut off = 0;
        for k in 0..n_layers {
            let (w, b, next) = self.layer(k, off);
            off = next;
            let mut z = weight_times(&w, &h);
            add_bias(&mut z, b);
            tape.inputs.push(h);
            if k + 1 < n_layers {
                let a = z.map(|v| self.activation.apply(v));
                tape.pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Ok((h, tape))
    }

    /// Pulls `grad_out = ∂L/∂output` back through the tape.
    ///
    /// Returns `(∂L/∂params, ∂L/∂input)`.
    pub fn backward(&self, tape: &Tape, grad_out: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n_layers = self.sizes.len() - 1;
        check_len(self.output_dim(), grad_out.nrows())?;
        check_len(tape.inputs[0].ncols(), grad_out.ncols())?;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for k in 0..n_layers {
            offsets.push(off);
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = grad_out.clone();
        for k in (0..n_layers).rev() {
            if k + 1 < n_layers {
                let act = self.activation;
                delta.zip_zip_apply(&tape.pre[k], &tape.inputs[k + 1], |d, z, a| {
                    *d *= act.derivative(z, a)
                });
            }
            let (i, o) = (self.sizes[k], self.sizes[k + 1]);
            let start = offsets[k];
            let gw = outer_sum(&delta, &tape.inputs[k]);
            grad[start..start + o * i].copy_from_slice(gw.as_slice());
            for (r, g) in grad[start + o * i..start + o * i + o].iter_mut().enumerate() {
                *g = delta.row(r).sum();
            }
            let (w, _, _) = self.layer(k, start);
            delta = w.transpose() * &delta;
        }
        Ok((grad, delta))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
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
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step `params ← params − lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grad.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_loss(net: &Mlp, x: &DMatrix<f64>) -> f64 {
        // L = Σ sin(out) + 0.5 Σ out²
        net.forward(x)
            .unwrap()
            .iter()
            .map(|o| o.sin() + 0.5 * o * o)
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Silu] {
            let net = Mlp::new(&[3, 7, 5, 2], act, 11).unwrap();
            let x = DMatrix::from_fn(3, 4, |r, c| ((r * 5 + c * 3) as f64 * 0.37).sin());
            let (out, tape) = net.forward_tape(&x).unwrap();
            let g_out = out.map(|o| o.cos() + o);
            let (gp, gx) = net.backward(&tape, &g_out).unwrap();
            let h = 1e-6;
            for i in (0..net.n_params()).step_by(3) {
                let mut a = net.clone();
                a.params_mut()[i] += h;
                let mut b = net.clone();
                b.params_mut()[i] -= h;
                let fd = (probe_loss(&a, &x) - probe_loss(&b, &x)) / (2.0 * h);
                assert!((fd - gp[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{act:?} param {i}");
            }
            for r in 0..3 {
                for c in 0..4 {
                    let mut xa = x.clone();
                    xa[(r, c)] += h;
                    let mut xb = x.clone();
                    xb[(r, c)] -= h;
                    let fd = (probe_loss(&net, &xa) - probe_loss(&net, &xb)) / (2.0 * h);
                    assert!((fd - gx[(r, c)]).abs() <= 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn forward_and_tape_agree() {
        let net = Mlp::new(&[2, 4, 1], Activation::Tanh, 3).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 1.0, 0.0, -1.0]);
        assert_eq!(net.forward(&x).unwrap(), net.forward_tape(&x).unwrap().0);
    }

    #[test]
    fn same_seed_same_params() {
        let a = Mlp::new(&[4, 8, 2], Activation::Silu, 5).unwrap();
        let b = Mlp::new(&[4, 8, 2], Activation::Silu, 5).unwrap();
        assert_eq!(a, b);
        assert!(Mlp::from_parts(vec![2, 2], Activation::Tanh, vec![0.0; 5]).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g).unwrap();
        }
        assert!(norm(&p) < 1e-3);
    }
}
