//! Sample-based f-divergence estimation through the variational lower bound
//! `sup_T E_p[T] − E_q[f*(T)]` with a critic `T = g_f(V_ω(x))`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{check_len, Error, Result};
use crate::gaussian::DiagonalGaussian;
use crate::nn::{Activation, Adam, Mlp, Tape};

pub const HIDDEN: usize = 64;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_LR: f64 = 1e-3;
pub const MINIBATCH: usize = 512;
pub const SMOOTHING_WINDOW: usize = 100;

/// Trainable critic: raw score network `V_ω` composed with the activation of a
/// divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    /// `input_dim → 64 → 64 → 1`, tanh hidden units.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        Ok(Discriminator {
            net: Mlp::new(&[input_dim, HIDDEN, HIDDEN, 1], Activation::Tanh, seed)?,
        })
    }

    pub fn omega(&self) -> &[f64] {
        self.net.params()
    }

    /// Raw scores `V_ω(x)` for a column batch.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward(x)?.iter().copied().collect())
    }

    /// Critic values `g_f(V_ω(x))`.
    pub fn critic(&self, spec: &DivergenceSpec, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.scores(x)?
            .into_iter()
            .map(|v| checked_activation(spec, v))
            .collect()
    }

    pub(crate) fn scores_tape(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Tape)> {
        let (out, tape) = self.net.forward_tape(x)?;
        Ok((out.iter().copied().collect(), tape))
    }
}

pub(crate) fn checked_activation(spec: &DivergenceSpec, v: f64) -> Result<f64> {
    let t = spec.g_f(v);
    if spec.f_star_domain.contains(t) {
        Ok(t)
    } else {
        Err(Error::Domain {
            what: "g_f(V)",
            value: t,
            lower: spec.f_star_domain.lower,
            upper: spec.f_star_domain.upper,
        })
    }
}

/// Result of [`fit_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalEstimate {
    pub value: f64,
    pub discriminator_steps: usize,
    /// Trailing mean (window [`SMOOTHING_WINDOW`]) of the per-step objective.
    pub lower_bound_trace: Vec<f64>,
}

/// Column batch from scalar samples.
pub fn scalar_batch(xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, xs.len(), xs)
}

/// `mean_p[g_f(V)] − mean_q[f*(g_f(V))]`, in the divergence's conventional
/// units (see [`DivergenceSpec::value_scale`]).
pub fn variational_objective(
    spec: &DivergenceSpec,
    disc: &Discriminator,
    samples_p: &DMatrix<f64>,
    samples_q: &DMatrix<f64>,
) -> Result<f64> {
    if samples_p.ncols() == 0 || samples_q.ncols() == 0 {
        return Err(Error::InvalidInput("empty sample batch".into()));
    }
    check_len(samples_p.nrows(), samples_q.nrows())?;
    let vp = disc.scores(samples_p)?;
    let vq = disc.scores(samples_q)?;
    objective_from_scores(spec, &vp, &vq)
}

fn objective_from_scores(spec: &DivergenceSpec, vp: &[f64], vq: &[f64]) -> Result<f64> {
    let mut ep = 0.0;
    for &v in vp {
        ep += checked_activation(spec, v)?;
    }
    let mut eq = 0.0;
    for &v in vq {
        checked_activation(spec, v)?;
        eq += spec.conjugate_of_activation(v)?;
    }
    Ok(spec.value_scale * (ep / vp.len() as f64 - eq / vq.len() as f64))
}

/// Objective and its gradient with respect to the critic parameters.
pub fn objective_and_grad(
    spec: &DivergenceSpec,
    disc: &Discriminator,
    samples_p: &DMatrix<f64>,
    samples_q: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>)> {
    if samples_p.ncols() == 0 || samples_q.ncols() == 0 {
        return Err(Error::InvalidInput("empty sample batch".into()));
    }
    let (vp, tp) = disc.scores_tape(samples_p)?;
    let (vq, tq) = disc.scores_tape(samples_q)?;
    let value = objective_from_scores(spec, &vp, &vq)?;
    let np = vp.len() as f64;
    let nq = vq.len() as f64;
    let s = spec.value_scale;
    let gp = DMatrix::from_iterator(1, vp.len(), vp.iter().map(|&v| s * spec.g_f_prime(v) / np));
    let mut gq = Vec::with_capacity(vq.len());
    for &v in &vq {
        gq.push(-s * spec.conjugate_of_activation_prime(v)? / nq);
    }
    let gq = DMatrix::from_vec(1, vq.len(), gq);
    let (mut grad, _) = disc.net.backward(&tp, &gp)?;
    let (grad_q, _) = disc.net.backward(&tq, &gq)?;
    for (a, b) in grad.iter_mut().zip(grad_q) {
        *a += b;
    }
    Ok((value, grad))
}

/// Trains a fresh critic by Adam ascent on minibatches drawn from the two
/// sample pools in shuffled epochs; the estimate is the mean of the last 100
/// minibatch objective values.
pub fn fit_estimate(
    spec: &DivergenceSpec,
    samples_p: &DMatrix<f64>,
    samples_q: &DMatrix<f64>,
    steps: usize,
    seed: u64,
) -> Result<(VariationalEstimate, Discriminator)> {
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    if samples_p.ncols() < MINIBATCH || samples_q.ncols() < MINIBATCH {
        return Err(Error::InvalidInput(format!(
            "need at least {MINIBATCH} samples per side, got {} and {}",
            samples_p.ncols(),
            samples_q.ncols()
        )));
    }
    check_len(samples_p.nrows(), samples_q.nrows())?;
    let mut disc = Discriminator::new(samples_p.nrows(), seed)?;
    let mut opt = Adam::new(disc.net.n_params(), DEFAULT_LR);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut draw_p = EpochSampler::new(samples_p.ncols());
    let mut draw_q = EpochSampler::new(samples_q.ncols());
    let mut raw = Vec::with_capacity(steps);
    let mut trace = Vec::with_capacity(steps);
    let mut window_sum = 0.0;
    for step in 0..steps {
        let bp = samples_p.select_columns(&draw_p.next(MINIBATCH, &mut rng));
        let bq = samples_q.select_columns(&draw_q.next(MINIBATCH, &mut rng));
        let (value, mut grad) = objective_and_grad(spec, &disc, &bp, &bq)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "variational objective",
                step,
            });
        }
        // ascent
        grad.iter_mut().for_each(|g| *g = -*g);
        opt.step(disc.net.params_mut(), &grad)?;
        raw.push(value);
        window_sum += value;
        if raw.len() > SMOOTHING_WINDOW {
            window_sum -= raw[raw.len() - 1 - SMOOTHING_WINDOW];
        }
        trace.push(window_sum / raw.len().min(SMOOTHING_WINDOW) as f64);
    }
    let value = *trace.last().unwrap();
    Ok((
        VariationalEstimate {
            value,
            discriminator_steps: steps,
            lower_bound_trace: trace,
        },
        disc,
    ))
}

/// Index stream that visits every sample once per shuffled epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    fn new(n: usize) -> Self {
        EpochSampler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (k - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Mean `|g_f(V_ω(x)) − f′(p(x)/q(x))|` over grid points lying within three
/// standard deviations of both means.
pub fn optimal_critic_residual(
    spec: &DivergenceSpec,
    disc: &Discriminator,
    p: &DiagonalGaussian,
    q: &DiagonalGaussian,
    grid: &[f64],
) -> Result<f64> {
    check_len(1, p.dim())?;
    check_len(1, q.dim())?;
    let near = |g: &DiagonalGaussian, x: f64| (x - g.mean()[0]).abs() <= 3.0 * g.variance()[0].sqrt();
    let pts: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&x| near(p, x) && near(q, x))
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidInput("no grid point in the high-density region".into()));
    }
    let t = disc.critic(spec, &scalar_batch(&pts))?;
    let total: f64 = pts
        .iter()
        .zip(&t)
        .map(|(&x, &tx)| {
            let ratio = (p.log_density(&[x]) - q.log_density(&[x])).exp();
            (tx - spec.f_prime(ratio)).abs()
        })
        .sum();
    Ok(total / pts.len() as f64)
}
