//! Unlearning losses, regularizers and fine-tuning loops that turn a frozen
//! denoiser `Φ` into an edited copy `Φ̂`.
//!
//! Every step draws `x_t` from trajectories of the frozen model and pulls the
//! trainable model's target-conditioned prediction toward the frozen model's
//! anchor-conditioned prediction.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_noise_batch, sample, Condition, ConceptSet, DenoiserNet, NoiseSchedule};
use crate::divergence::{DivergenceKind, DivergenceSpec};
use crate::error::{check_len, Error, Result};
use crate::eval;
use crate::nn::{dot, norm, Adam};
use crate::variational::{objective_and_grad, Discriminator};

/// Exponent above which the χ² loss refuses to evaluate.
pub const CHI2_GUARD: f64 = 80.0;
/// Anchor label that selects the null (unconditional) concept.
pub const NULL_ANCHOR: &str = "null";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClosedForm,
    Variational,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ClosedForm => "closed_form",
            Mode::Variational => "variational",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form" | "closed-form" => Ok(Mode::ClosedForm),
            "variational" => Ok(Mode::Variational),
            other => Err(Error::InvalidInput(format!("unknown mode `{other}`"))),
        }
    }
}

/// Which conditional trajectories supply the `x_t` draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Anchor,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub target: String,
    /// Concept label, or `"null"` for the unconditional branch.
    pub anchor: String,
    pub mode: Mode,
    pub divergence: DivergenceKind,
    pub omega_t: f64,
    pub sigma: f64,
    pub prior_preservation: bool,
    pub preservation_weight: f64,
    /// Defaults to every concept except the target.
    pub preservation_concepts: Option<Vec<String>>,
    pub gradient_surgery: bool,
    pub importance_sampling: bool,
    pub importance_cutoff: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub discriminator_ratio: usize,
    pub discriminator_lr: f64,
    pub trajectory_source: TrajectorySource,
    pub trajectory_pool: usize,
    /// Evaluate every `eval_every` steps (0 disables).
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            target: "A".into(),
            anchor: "B".into(),
            mode: Mode::ClosedForm,
            divergence: DivergenceKind::SquaredHellinger,
            omega_t: 1.0,
            sigma: 1.0,
            prior_preservation: false,
            preservation_weight: 1.0,
            preservation_concepts: None,
            gradient_surgery: false,
            importance_sampling: false,
            importance_cutoff: 0.2,
            steps: 500,
            learning_rate: 1e-3,
            batch_size: 256,
            seed: 0,
            discriminator_ratio: 5,
            discriminator_lr: 1e-3,
            trajectory_source: TrajectorySource::Anchor,
            trajectory_pool: 2048,
            eval_every: 0,
            eval_samples: 500,
        }
    }
}

/// Closed-form losses available per divergence.
pub fn closed_form_supported(kind: DivergenceKind) -> bool {
    matches!(
        kind,
        DivergenceKind::Kl | DivergenceKind::SquaredHellinger | DivergenceKind::PearsonChi2 | DivergenceKind::Jeffreys
    )
}

impl UnlearnConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Applies `key=value` overrides; values are TOML literals, falling back
    /// to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table =
            toml::Table::try_from(self).map_err(|e| Error::Format(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("override `{o}` is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), value);
        }
        let cfg: UnlearnConfig = table.try_into().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self, concepts: &ConceptSet) -> Result<()> {
        concepts.index_of(&self.target)?;
        if self.anchor != NULL_ANCHOR {
            concepts.index_of(&self.anchor)?;
        }
        if self.target == self.anchor {
            return Err(Error::InvalidInput("target and anchor must differ".into()));
        }
        if self.mode == Mode::ClosedForm && !closed_form_supported(self.divergence) {
            return Err(Error::Unsupported {
                operation: "closed-form unlearning",
                divergence: self.divergence.as_str(),
            });
        }
        if !(self.sigma > 0.0) || !(self.omega_t > 0.0) {
            return Err(Error::InvalidInput("sigma and omega_t must be positive".into()));
        }
        if !(self.importance_cutoff > 0.0 && self.importance_cutoff <= 1.0) {
            return Err(Error::InvalidInput("importance_cutoff must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.trajectory_pool == 0 {
            return Err(Error::InvalidInput("batch_size and trajectory_pool must be positive".into()));
        }
        if self.mode == Mode::Variational && self.discriminator_ratio == 0 {
            return Err(Error::InvalidInput("discriminator_ratio must be positive".into()));
        }
        if let Some(p) = &self.preservation_concepts {
            for l in p {
                if *l == self.target {
                    return Err(Error::InvalidInput("preservation concepts must exclude the target".into()));
                }
                concepts.index_of(l)?;
            }
        }
        Ok(())
    }

    fn anchor_condition(&self, concepts: &ConceptSet) -> Result<Condition> {
        if self.anchor == NULL_ANCHOR {
            Ok(Condition::Null)
        } else {
            Ok(Condition::Concept(concepts.index_of(&self.anchor)?))
        }
    }

    fn preservation_indices(&self, concepts: &ConceptSet) -> Result<Vec<usize>> {
        match &self.preservation_concepts {
            Some(list) => list.iter().map(|l| concepts.index_of(l)).collect(),
            None => Ok((0..concepts.len())
                .filter(|&i| concepts.concepts()[i].label != self.target)
                .collect()),
        }
    }
}

fn sq_dists(frozen: &DMatrix<f64>, trainable: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_len(frozen.nrows(), trainable.nrows())?;
    check_len(frozen.ncols(), trainable.ncols())?;
    if frozen.ncols() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    Ok((frozen - trainable).column_iter().map(|c| c.norm_squared()).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `ω · ‖Φ − Φ̂‖²`, averaged over the batch.
pub fn loss_mse(frozen: &DMatrix<f64>, trainable: &DMatrix<f64>, omega_t: f64) -> Result<f64> {
    Ok(omega_t * mean(&sq_dists(frozen, trainable)?))
}

/// `−ω · exp(−‖Φ − Φ̂‖² / (8σ²))`, averaged over the batch.
pub fn loss_hellinger(frozen: &DMatrix<f64>, trainable: &DMatrix<f64>, omega_t: f64, sigma: f64) -> Result<f64> {
    let s = 8.0 * sigma * sigma;
    Ok(-omega_t * mean(&sq_dists(frozen, trainable)?.iter().map(|d| (-d / s).exp()).collect::<Vec<_>>()))
}

fn chi2_guard(exponents: &[f64]) -> Result<()> {
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > CHI2_GUARD || !max.is_finite() {
        return Err(Error::Explosion {
            max_exponent: max,
            mean_exponent: mean(exponents),
            guard: CHI2_GUARD,
            n_over: exponents.iter().filter(|&&e| !(e <= CHI2_GUARD)).count(),
            batch: exponents.len(),
        });
    }
    Ok(())
}

/// `ω · exp(‖Φ − Φ̂‖² / σ²)`, averaged over the batch; fails once an exponent
/// exceeds [`CHI2_GUARD`].
pub fn loss_chi2(frozen: &DMatrix<f64>, trainable: &DMatrix<f64>, omega_t: f64, sigma: f64) -> Result<f64> {
    let e: Vec<f64> = sq_dists(frozen, trainable)?
        .iter()
        .map(|d| d / (sigma * sigma))
        .collect();
    chi2_guard(&e)?;
    Ok(omega_t * mean(&e.iter().map(|x| x.exp()).collect::<Vec<_>>()))
}

/// `(ω / σ²) · ‖Φ − Φ̂‖²`, averaged over the batch.
pub fn loss_jeffreys(frozen: &DMatrix<f64>, trainable: &DMatrix<f64>, omega_t: f64, sigma: f64) -> Result<f64> {
    loss_mse(frozen, trainable, omega_t / (sigma * sigma))
}

/// Closed-form loss and its gradient with respect to the trainable
/// predictions.
pub fn closed_form_loss_and_grad(
    kind: DivergenceKind,
    frozen: &DMatrix<f64>,
    trainable: &DMatrix<f64>,
    omega_t: f64,
    sigma: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let d2 = sq_dists(frozen, trainable)?;
    let n = d2.len() as f64;
    // per-sample dℓ/d‖d‖²
    let (value, slope): (f64, Vec<f64>) = match kind {
        DivergenceKind::Kl => (omega_t * mean(&d2), vec![omega_t; d2.len()]),
        DivergenceKind::Jeffreys => {
            let w = omega_t / (sigma * sigma);
            (w * mean(&d2), vec![w; d2.len()])
        }
        DivergenceKind::SquaredHellinger => {
            let s = 8.0 * sigma * sigma;
            let e: Vec<f64> = d2.iter().map(|d| (-d / s).exp()).collect();
            (-omega_t * mean(&e), e.iter().map(|v| omega_t * v / s).collect())
        }
        DivergenceKind::PearsonChi2 => {
            let ex: Vec<f64> = d2.iter().map(|d| d / (sigma * sigma)).collect();
            chi2_guard(&ex)?;
            let e: Vec<f64> = ex.iter().map(|x| x.exp()).collect();
            (omega_t * mean(&e), e.iter().map(|v| omega_t * v / (sigma * sigma)).collect())
        }
        other => {
            return Err(Error::Unsupported {
                operation: "closed-form unlearning",
                divergence: other.as_str(),
            })
        }
    };
    // ∂‖Φ − Φ̂‖²/∂Φ̂ = −2(Φ − Φ̂)
    let mut grad = trainable - frozen;
    for (j, mut col) in grad.column_iter_mut().enumerate() {
        col *= 2.0 * slope[j] / n;
    }
    Ok((value, grad))
}

/// Gradient norms of the three closed-form losses at one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradLogRecord {
    pub step: usize,
    pub mse_value: f64,
    pub grad_norm_kl: f64,
    pub grad_norm_h2: f64,
    pub grad_norm_chi2: f64,
}

/// One `(x_t, t)` point with the conditions of both models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub x: [f64; 2],
    pub t: usize,
    pub condition: Condition,
}

/// Per-sample gradients of `MSE`, `−exp(−MSE)` and `exp(MSE)` with respect to
/// the trainable parameters, where `MSE = ‖frozen_out − Φ̂(probe)‖²`.
///
/// Checks `∇H² = e^{−MSE}∇MSE` and `∇χ² = e^{MSE}∇MSE` to 1e−6 relative.
pub fn gradient_relation_check(
    trainable: &DenoiserNet,
    probe: &Probe,
    frozen_out: [f64; 2],
    step: usize,
) -> Result<GradLogRecord> {
    let SampleGradients {
        mse: g_mse,
        hellinger: g_h2,
        chi2: g_chi2,
        mse_value: mse,
    } = per_sample_gradients(trainable, probe, frozen_out)?;
    let (down, up) = ((-mse).exp(), mse.exp());
    for (name, g, factor) in [("H²", &g_h2, down), ("χ²", &g_chi2, up)] {
        let expect: Vec<f64> = g_mse.iter().map(|v| factor * v).collect();
        let scale = norm(&expect);
        let err = norm(&g.iter().zip(&expect).map(|(a, b)| a - b).collect::<Vec<_>>());
        if !(err <= 1e-6 * scale || (scale == 0.0 && err == 0.0)) {
            return Err(Error::RelationViolated(format!(
                "{name} gradient deviates from e^(±MSE)·∇MSE by {err:e} (scale {scale:e}) at step {step}"
            )));
        }
    }
    let rec = GradLogRecord {
        step,
        mse_value: mse,
        grad_norm_kl: norm(&g_mse),
        grad_norm_h2: norm(&g_h2),
        grad_norm_chi2: norm(&g_chi2),
    };
    if !(rec.grad_norm_h2 <= rec.grad_norm_kl + 1e-9 * rec.grad_norm_kl.max(1.0)
        && rec.grad_norm_kl <= rec.grad_norm_chi2 + 1e-9 * rec.grad_norm_chi2.max(1.0))
    {
        return Err(Error::RelationViolated(format!("gradient norm ordering broken: {rec:?}")));
    }
    Ok(rec)
}

/// Parameter gradients of the three unit-weight losses at one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradients {
    /// `∇MSE`.
    pub mse: Vec<f64>,
    /// `∇(−e^{−MSE})`.
    pub hellinger: Vec<f64>,
    /// `∇e^{MSE}`.
    pub chi2: Vec<f64>,
    pub mse_value: f64,
}

pub fn per_sample_gradients(
    trainable: &DenoiserNet,
    probe: &Probe,
    frozen_out: [f64; 2],
) -> Result<SampleGradients> {
    let x = DMatrix::from_column_slice(2, 1, &probe.x);
    let (out, tape) = trainable.predict_tape(&x, &[probe.condition], &[probe.t])?;
    let f = DMatrix::from_column_slice(2, 1, &frozen_out);
    let d = &out - &f;
    let mse = d.norm_squared();
    let backward = |scale: f64| trainable.backward(&tape, &(&d * (2.0 * scale)));
    Ok(SampleGradients {
        mse: backward(1.0)?,
        hellinger: backward((-mse).exp())?,
        chi2: backward(mse.exp())?,
        mse_value: mse,
    })
}

/// PCGrad-style projection: removes the component of `g_unlearn` that
/// opposes `g_preserve`.
pub fn gradient_surgery(g_unlearn: &[f64], g_preserve: &[f64]) -> Result<Vec<f64>> {
    check_len(g_unlearn.len(), g_preserve.len())?;
    let gp2 = dot(g_preserve, g_preserve);
    let inner = dot(g_unlearn, g_preserve);
    if gp2 == 0.0 || inner >= 0.0 {
        return Ok(g_unlearn.to_vec());
    }
    let c = inner / gp2;
    Ok(g_unlearn.iter().zip(g_preserve).map(|(u, p)| u - c * p).collect())
}

/// Diffusion step for one loss evaluation: uniform on `1..=T`, or on the
/// last `⌈cutoff·T⌉` generation steps (`t` near 0) when importance sampling
/// is on.
pub fn sample_timestep(importance_sampling: bool, cutoff: f64, steps: usize, rng: &mut ChaCha8Rng) -> usize {
    let hi = if importance_sampling {
        ((cutoff * steps as f64).ceil() as usize).clamp(1, steps)
    } else {
        steps
    };
    rng.random_range(1..=hi)
}

/// Mean `‖Φ − Φ̂‖²` on noised real samples of the preservation concepts, and
/// its gradient with respect to `Φ̂`'s parameters.
pub fn prior_preservation_loss(
    base: &DenoiserNet,
    trainable: &DenoiserNet,
    concepts: &ConceptSet,
    preservation: &[usize],
    schedule: &NoiseSchedule,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    if preservation.is_empty() || batch == 0 {
        return Ok((0.0, vec![0.0; trainable.n_params()]));
    }
    let labels: Vec<usize> = (0..batch).map(|_| preservation[rng.random_range(0..preservation.len())]).collect();
    let mut x0 = DMatrix::zeros(2, batch);
    for (j, &c) in labels.iter().enumerate() {
        let s = concepts.sample(c, 1, rng)?;
        x0.set_column(j, &s.column(0));
    }
    let t: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps = DMatrix::from_fn(2, batch, |_, _| StandardNormal.sample(rng));
    let xt = forward_noise_batch(&x0, &t, &eps, schedule)?;
    let cond: Vec<Condition> = labels.iter().map(|&c| Condition::Concept(c)).collect();
    let frozen = base.predict(&xt, &cond, &t)?;
    let (pred, tape) = trainable.predict_tape(&xt, &cond, &t)?;
    let value = loss_mse(&frozen, &pred, 1.0)?;
    let g_out = (&pred - &frozen) * (2.0 / batch as f64);
    Ok((value, trainable.backward(&tape, &g_out)?))
}

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub mse: f64,
    pub grad_norm: f64,
    pub preservation_loss: f64,
    /// Per-concept accuracy, present on evaluation steps.
    pub accuracy: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub net: DenoiserNet,
    pub metrics: Vec<StepMetrics>,
    pub grad_log: Vec<GradLogRecord>,
    pub discriminator: Option<Discriminator>,
}

/// `x_t` draws from the frozen model's conditional trajectories.
struct TrajectoryPool {
    /// `states[t - 1]` holds `x_t` for every trajectory.
    states: Vec<DMatrix<f64>>,
}

impl TrajectoryPool {
    fn generate(net: &DenoiserNet, cond: Condition, schedule: &NoiseSchedule, n: usize, seed: u64) -> Result<Self> {
        let out = sample(net, cond, schedule, n, seed, true)?;
        let mut traj = out.trajectory.expect("trajectory requested");
        // traj[k] = x_{T−k}; drop x₀ and reverse so that index t−1 is x_t
        traj.pop();
        traj.reverse();
        Ok(TrajectoryPool { states: traj })
    }

    fn draw(&self, t: &[usize], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let n = self.states[0].ncols();
        let mut x = DMatrix::zeros(2, t.len());
        for (j, &tj) in t.iter().enumerate() {
            x.set_column(j, &self.states[tj - 1].column(rng.random_range(0..n)));
        }
        x
    }
}

struct Setup {
    target: Condition,
    anchor: Condition,
    preservation: Vec<usize>,
    pool: TrajectoryPool,
    rng: ChaCha8Rng,
}

fn setup(base: &DenoiserNet, concepts: &ConceptSet, schedule: &NoiseSchedule, config: &UnlearnConfig) -> Result<Setup> {
    config.validate(concepts)?;
    check_len(concepts.len(), base.n_concepts())?;
    let target = Condition::Concept(concepts.index_of(&config.target)?);
    let anchor = config.anchor_condition(concepts)?;
    let source = match config.trajectory_source {
        TrajectorySource::Anchor => anchor,
        TrajectorySource::Target => target,
    };
    let pool = TrajectoryPool::generate(base, source, schedule, config.trajectory_pool, config.seed ^ 0x7a11)?;
    Ok(Setup {
        target,
        anchor,
        preservation: config.preservation_indices(concepts)?,
        pool,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    })
}

fn draw_steps(config: &UnlearnConfig, schedule: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..config.batch_size)
        .map(|_| sample_timestep(config.importance_sampling, config.importance_cutoff, schedule.steps(), rng))
        .collect()
}

/// Combines the unlearning gradient with the preservation gradient.
#[allow(clippy::too_many_arguments)]
fn regularize(
    base: &DenoiserNet,
    trainable: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    config: &UnlearnConfig,
    s: &mut Setup,
    grad: Vec<f64>,
) -> Result<(Vec<f64>, f64)> {
    if !config.prior_preservation {
        return Ok((grad, 0.0));
    }
    let (value, gp) = prior_preservation_loss(
        base,
        trainable,
        concepts,
        &s.preservation,
        schedule,
        config.batch_size,
        &mut s.rng,
    )?;
    let gp: Vec<f64> = gp.iter().map(|g| config.preservation_weight * g).collect();
    let gu = if config.gradient_surgery {
        gradient_surgery(&grad, &gp)?
    } else {
        grad
    };
    Ok((gu.iter().zip(&gp).map(|(a, b)| a + b).collect(), config.preservation_weight * value))
}

fn maybe_eval(
    net: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    config: &UnlearnConfig,
    step: usize,
) -> Result<Option<Vec<f64>>> {
    if config.eval_every == 0 || !(step + 1).is_multiple_of(config.eval_every) {
        return Ok(None);
    }
    let reports = eval::evaluate(net, concepts, schedule, config.eval_samples, config.seed ^ 0xe7a1)?;
    Ok(Some(reports.iter().map(|r| r.accuracy).collect()))
}

fn non_finite(step: usize) -> Error {
    Error::NonFinite {
        what: "trainable parameters",
        step,
    }
}

/// Closed-form unlearning (KL/MSE, H², χ² or Jeffreys).
pub fn unlearn_closed_form(
    base: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    config: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    if config.mode != Mode::ClosedForm {
        return Err(Error::InvalidInput("config mode is not closed_form".into()));
    }
    let mut s = setup(base, concepts, schedule, config)?;
    let mut net = base.clone();
    let mut opt = Adam::new(net.n_params(), config.learning_rate);
    let mut metrics = Vec::with_capacity(config.steps);
    let mut grad_log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let t = draw_steps(config, schedule, &mut s.rng);
        let x = s.pool.draw(&t, &mut s.rng);
        let frozen = base.predict(&x, &vec![s.anchor; t.len()], &t)?;
        let (pred, tape) = net.predict_tape(&x, &vec![s.target; t.len()], &t)?;
        let (loss, g_out) = closed_form_loss_and_grad(config.divergence, &frozen, &pred, config.omega_t, config.sigma)?;
        let mse = loss_mse(&frozen, &pred, 1.0)?;
        let grad = net.backward(&tape, &g_out)?;
        let grad_norm = norm(&grad);
        let probe = Probe {
            x: [x[(0, 0)], x[(1, 0)]],
            t: t[0],
            condition: s.target,
        };
        grad_log.push(gradient_relation_check(&net, &probe, [frozen[(0, 0)], frozen[(1, 0)]], step)?);
        let (total, pres) = regularize(base, &net, concepts, schedule, config, &mut s, grad)?;
        net.apply_step(&mut opt, &total).map_err(|_| non_finite(step))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }
        metrics.push(StepMetrics {
            step,
            loss,
            mse,
            grad_norm,
            preservation_loss: pres,
            accuracy: maybe_eval(&net, concepts, schedule, config, step)?,
        });
    }
    Ok(UnlearnOutcome {
        net,
        metrics,
        grad_log,
        discriminator: None,
    })
}

/// Critic inputs `(ε̂ + σz, x_t, t/T)`, one column per sample.
fn critic_inputs(eps: &DMatrix<f64>, x: &DMatrix<f64>, t: &[usize], steps: usize, sigma: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = t.len();
    DMatrix::from_fn(5, n, |r, j| match r {
        0 | 1 => {
            let z: f64 = StandardNormal.sample(rng);
            eps[(r, j)] + sigma * z
        }
        2 | 3 => x[(r - 2, j)],
        _ => t[j] as f64 / steps as f64,
    })
}

/// Min-max unlearning through the variational representation: the critic
/// ascends `E_Φ[T] − E_Φ̂[f*(T)]`, the trainable model descends it.
pub fn unlearn_variational(
    base: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    config: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    if config.mode != Mode::Variational {
        return Err(Error::InvalidInput("config mode is not variational".into()));
    }
    let spec: DivergenceSpec = config.divergence.spec();
    let mut s = setup(base, concepts, schedule, config)?;
    let mut net = base.clone();
    let mut disc = Discriminator::new(5, config.seed ^ 0xd15c)?;
    let mut opt = Adam::new(net.n_params(), config.learning_rate);
    let mut dopt = Adam::new(disc.net.n_params(), config.discriminator_lr);
    let mut metrics = Vec::with_capacity(config.steps);
    let steps_total = schedule.steps();
    for step in 0..config.steps {
        let mut objective = 0.0;
        for _ in 0..config.discriminator_ratio {
            let t = draw_steps(config, schedule, &mut s.rng);
            let x = s.pool.draw(&t, &mut s.rng);
            let frozen = base.predict(&x, &vec![s.anchor; t.len()], &t)?;
            let pred = net.predict(&x, &vec![s.target; t.len()], &t)?;
            let ip = critic_inputs(&frozen, &x, &t, steps_total, config.sigma, &mut s.rng);
            let iq = critic_inputs(&pred, &x, &t, steps_total, config.sigma, &mut s.rng);
            let (value, mut g) = objective_and_grad(&spec, &disc, &ip, &iq)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "variational objective",
                    step,
                });
            }
            g.iter_mut().for_each(|v| *v = -*v);
            dopt.step(disc.net.params_mut(), &g)?;
            objective = value;
        }
        // generator: minimize −E_Φ̂[f*(T(ŷ))]
        let t = draw_steps(config, schedule, &mut s.rng);
        let x = s.pool.draw(&t, &mut s.rng);
        let frozen = base.predict(&x, &vec![s.anchor; t.len()], &t)?;
        let (pred, tape) = net.predict_tape(&x, &vec![s.target; t.len()], &t)?;
        let iq = critic_inputs(&pred, &x, &t, steps_total, config.sigma, &mut s.rng);
        let (vq, dtape) = disc.net.forward_tape(&iq)?;
        let n = t.len() as f64;
        let mut dv = DMatrix::zeros(1, t.len());
        for j in 0..t.len() {
            crate::variational::checked_activation(&spec, vq[j])?;
            dv[j] = -spec.value_scale * spec.conjugate_of_activation_prime(vq[j])? / n;
        }
        let (_, din) = disc.net.backward(&dtape, &dv)?;
        let g_out = din.rows(0, 2).into_owned();
        let grad = net.backward(&tape, &g_out)?;
        let grad_norm = norm(&grad);
        let mse = loss_mse(&frozen, &pred, 1.0)?;
        let (total, pres) = regularize(base, &net, concepts, schedule, config, &mut s, grad)?;
        net.apply_step(&mut opt, &total).map_err(|_| non_finite(step))?;
        metrics.push(StepMetrics {
            step,
            loss: objective,
            mse,
            grad_norm,
            preservation_loss: pres,
            accuracy: maybe_eval(&net, concepts, schedule, config, step)?,
        });
    }
    Ok(UnlearnOutcome {
        net,
        metrics,
        grad_log: Vec::new(),
        discriminator: Some(disc),
    })
}

/// Dispatches on `config.mode`.
pub fn unlearn(
    base: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    config: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    match config.mode {
        Mode::ClosedForm => unlearn_closed_form(base, concepts, schedule, config),
        Mode::Variational => unlearn_variational(base, concepts, schedule, config),
    }
}
