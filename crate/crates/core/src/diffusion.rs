//! A small conditional DDPM on 2-D Gaussian-mixture data.
//!
//! Concepts are mixture components; the denoiser predicts the injected noise
//! from `(x_t, concept embedding, t)`. A fixed all-zeros embedding acts as the
//! null (unconditional) concept.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, Adam, Mlp, Tape};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.2;
pub const EMBED_DIM: usize = 8;
pub const TIME_FEATURES: usize = 8;
pub const HIDDEN: usize = 128;
pub const CHECKPOINT_FORMAT: &str = "fdmu-denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Variance schedule with `β_t` linear in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidInput(format!(
                "bad schedule: {steps} steps, beta {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn default_toy() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid schedule")
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if (1..=self.steps()).contains(&t) {
            Ok(t - 1)
        } else {
            Err(Error::InvalidInput(format!(
                "step {t} outside 1..={}",
                self.steps()
            )))
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check(t)?])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// A named isotropic 2-D mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub label: String,
    pub mean: [f64; 2],
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSet {
    concepts: Vec<Concept>,
}

impl ConceptSet {
    pub fn new(concepts: Vec<Concept>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::InvalidInput("empty concept set".into()));
        }
        for (i, c) in concepts.iter().enumerate() {
            if !(c.variance > 0.0) || !c.mean.iter().all(|m| m.is_finite()) {
                return Err(Error::InvalidInput(format!("concept `{}` is degenerate", c.label)));
            }
            if concepts[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::InvalidInput(format!("duplicate concept `{}`", c.label)));
            }
        }
        Ok(ConceptSet { concepts })
    }

    /// Four components at `(±4, ±4)` with variance 0.25, labelled
    /// counter-clockwise from the first quadrant.
    pub fn four_corners() -> Self {
        let mk = |label: &str, x: f64, y: f64| Concept {
            label: label.into(),
            mean: [x, y],
            variance: 0.25,
        };
        ConceptSet {
            concepts: vec![
                mk("A", 4.0, 4.0),
                mk("B", -4.0, 4.0),
                mk("C", -4.0, -4.0),
                mk("D", 4.0, -4.0),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn get(&self, index: usize) -> Result<&Concept> {
        self.concepts
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no concept with index {index}")))
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.concepts
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::InvalidInput(format!("unknown concept `{label}`")))
    }

    /// `n` draws from component `index` as a `2 × n` batch.
    pub fn sample(&self, index: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let c = self.get(index)?;
        let sd = c.variance.sqrt();
        Ok(DMatrix::from_fn(2, n, |r, _| {
            let z: f64 = StandardNormal.sample(rng);
            c.mean[r] + sd * z
        }))
    }

    /// `n_per` labelled draws from every component.
    pub fn dataset(&self, n_per: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(2 * n_per * self.len());
        let mut labels = Vec::with_capacity(n_per * self.len());
        for i in 0..self.len() {
            let s = self.sample(i, n_per, &mut rng)?;
            xs.extend_from_slice(s.as_slice());
            labels.extend(std::iter::repeat_n(i, n_per));
        }
        Ok(Dataset {
            x: DMatrix::from_vec(2, labels.len(), xs),
            labels,
        })
    }
}

/// Labelled training samples (`2 × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// Conditioning signal for the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Concept(usize),
    Null,
}

/// `x_t = √ᾱ_t x₀ + √(1−ᾱ_t) ε`.
pub fn forward_noise(x0: [f64; 2], t: usize, eps: [f64; 2], schedule: &NoiseSchedule) -> Result<[f64; 2]> {
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok([a * x0[0] + b * eps[0], a * x0[1] + b * eps[1]])
}

/// Batched [`forward_noise`] with per-column steps.
pub fn forward_noise_batch(
    x0: &DMatrix<f64>,
    t: &[usize],
    eps: &DMatrix<f64>,
    schedule: &NoiseSchedule,
) -> Result<DMatrix<f64>> {
    check_len(x0.ncols(), t.len())?;
    check_len(x0.ncols(), eps.ncols())?;
    let mut out = DMatrix::zeros(2, t.len());
    for (j, &tj) in t.iter().enumerate() {
        let v = forward_noise([x0[(0, j)], x0[(1, j)]], tj, [eps[(0, j)], eps[(1, j)]], schedule)?;
        out[(0, j)] = v[0];
        out[(1, j)] = v[1];
    }
    Ok(out)
}

fn time_features(t: usize) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let freq = (-(1000f64.ln()) * k as f64 / (TIME_FEATURES / 2) as f64).exp();
        let a = t as f64 * freq;
        out[2 * k] = a.sin();
        out[2 * k + 1] = a.cos();
    }
    out
}

/// Conditional noise predictor `Φ(x_t, c, t)`.
///
/// The flat parameter vector is the MLP's parameters followed by the
/// concept-embedding table (row per concept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet {
    mlp: Mlp,
    embedding: Vec<f64>,
    n_concepts: usize,
}

pub struct DenoiserTape {
    tape: Tape,
    cond: Vec<Condition>,
}

impl DenoiserNet {
    /// `18 → 128 → 128 → 128 → 2` SiLU network with embedding dimension 8.
    pub fn new(n_concepts: usize, seed: u64) -> Result<Self> {
        let input = 2 + TIME_FEATURES + EMBED_DIM;
        let mlp = Mlp::new(&[input, HIDDEN, HIDDEN, HIDDEN, 2], Activation::Silu, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
        let embedding = (0..n_concepts * EMBED_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(DenoiserNet {
            mlp,
            embedding,
            n_concepts,
        })
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params() + self.embedding.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mlp.params().to_vec();
        p.extend_from_slice(&self.embedding);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(self.n_params(), params.len())?;
        let m = self.mlp.n_params();
        self.mlp.params_mut().copy_from_slice(&params[..m]);
        self.embedding.copy_from_slice(&params[m..]);
        Ok(())
    }

    /// Applies one optimizer step with a flat gradient.
    pub fn apply_step(&mut self, opt: &mut Adam, grad: &[f64]) -> Result<()> {
        let mut p = self.params();
        opt.step(&mut p, grad)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "denoiser parameters",
                step: 0,
            });
        }
        self.set_params(&p)
    }

    /// SHA-256 of the little-endian parameter bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.mlp.params().iter().chain(&self.embedding) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn inputs(&self, x: &DMatrix<f64>, cond: &[Condition], t: &[usize]) -> Result<DMatrix<f64>> {
        check_len(2, x.nrows())?;
        check_len(x.ncols(), cond.len())?;
        check_len(x.ncols(), t.len())?;
        let rows = 2 + TIME_FEATURES + EMBED_DIM;
        let mut data = Vec::with_capacity(rows * x.ncols());
        for j in 0..x.ncols() {
            data.push(x[(0, j)]);
            data.push(x[(1, j)]);
            data.extend_from_slice(&time_features(t[j]));
            match cond[j] {
                Condition::Null => data.extend_from_slice(&[0.0; EMBED_DIM]),
                Condition::Concept(c) => {
                    if c >= self.n_concepts {
                        return Err(Error::InvalidInput(format!("no concept with index {c}")));
                    }
                    data.extend_from_slice(&self.embedding[c * EMBED_DIM..(c + 1) * EMBED_DIM]);
                }
            }
        }
        Ok(DMatrix::from_vec(rows, x.ncols(), data))
    }

    /// Predicted noise, `2 × n`.
    pub fn predict(&self, x: &DMatrix<f64>, cond: &[Condition], t: &[usize]) -> Result<DMatrix<f64>> {
        self.mlp.forward(&self.inputs(x, cond, t)?)
    }

    pub fn predict_tape(
        &self,
        x: &DMatrix<f64>,
        cond: &[Condition],
        t: &[usize],
    ) -> Result<(DMatrix<f64>, DenoiserTape)> {
        let (out, tape) = self.mlp.forward_tape(&self.inputs(x, cond, t)?)?;
        Ok((
            out,
            DenoiserTape {
                tape,
                cond: cond.to_vec(),
            },
        ))
    }

    /// Flat parameter gradient for `grad_out = ∂L/∂ε̂`.
    pub fn backward(&self, tape: &DenoiserTape, grad_out: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (mut grad, gin) = self.mlp.backward(&tape.tape, grad_out)?;
        let mut gemb = vec![0.0; self.embedding.len()];
        let off = 2 + TIME_FEATURES;
        for (j, c) in tape.cond.iter().enumerate() {
            if let Condition::Concept(c) = *c {
                for k in 0..EMBED_DIM {
                    gemb[c * EMBED_DIM + k] += gin[(off + k, j)];
                }
            }
        }
        grad.extend_from_slice(&gemb);
        Ok(grad)
    }
}

/// ε-prediction training protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the concept by the null embedding.
    pub null_prob: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 2e-3,
            null_prob: 0.15,
            seed: 0,
        }
    }
}

pub const MIN_SAMPLES_PER_CONCEPT: usize = 1000;

/// Trains a fresh denoiser on `data`; returns the model and the per-epoch
/// mean loss.
pub fn pretrain(
    data: &Dataset,
    n_concepts: usize,
    schedule: &NoiseSchedule,
    config: &PretrainConfig,
) -> Result<(DenoiserNet, Vec<f64>)> {
    check_len(data.x.ncols(), data.labels.len())?;
    for c in 0..n_concepts {
        let n = data.labels.iter().filter(|&&l| l == c).count();
        if n < MIN_SAMPLES_PER_CONCEPT {
            return Err(Error::InvalidInput(format!(
                "concept {c} has {n} samples, need at least {MIN_SAMPLES_PER_CONCEPT}"
            )));
        }
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let mut net = DenoiserNet::new(n_concepts, config.seed)?;
    let mut opt = Adam::new(net.n_params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd1ff_u64);
    let mut order: Vec<usize> = (0..data.labels.len()).collect();
    let total_steps = config.epochs * order.len().div_ceil(config.batch_size);
    let mut step = 0;
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let x0 = data.x.select_columns(chunk);
            let n = chunk.len();
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(1..=schedule.steps())).collect();
            let eps = DMatrix::from_fn(2, n, |_, _| StandardNormal.sample(&mut rng));
            let cond: Vec<Condition> = chunk
                .iter()
                .map(|&i| {
                    if rng.random::<f64>() < config.null_prob {
                        Condition::Null
                    } else {
                        Condition::Concept(data.labels[i])
                    }
                })
                .collect();
            let xt = forward_noise_batch(&x0, &t, &eps, schedule)?;
            let (pred, tape) = net.predict_tape(&xt, &cond, &t)?;
            let diff = &pred - &eps;
            let loss = diff.norm_squared() / n as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "pretraining loss",
                    step,
                });
            }
            let grad = net.backward(&tape, &(diff * (2.0 / n as f64)))?;
            // cosine decay to a tenth of the base rate
            let frac = step as f64 / total_steps.max(1) as f64;
            opt.lr = config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
            net.apply_step(&mut opt, &grad).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, step },
                other => other,
            })?;
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        losses.push(epoch_loss / batches as f64);
    }
    Ok((net, losses))
}

/// Generated batch and, optionally, the full reverse trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// `x₀`, `2 × n`.
    pub samples: DMatrix<f64>,
    /// `trajectory[k]` holds `x_{T−k}`; the last entry equals `samples`.
    pub trajectory: Option<Vec<DMatrix<f64>>>,
}

/// Ancestral sampling with posterior variance `β_t`.
pub fn sample(
    net: &DenoiserNet,
    cond: Condition,
    schedule: &NoiseSchedule,
    n: usize,
    seed: u64,
    record_trajectory: bool,
) -> Result<SampleOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(2, n, |_, _| StandardNormal.sample(&mut rng));
    let mut traj = record_trajectory.then(|| vec![x.clone()]);
    let conds = vec![cond; n];
    for t in (1..=schedule.steps()).rev() {
        if n == 0 {
            break;
        }
        let ts = vec![t; n];
        let eps = net.predict(&x, &conds, &ts)?;
        let (a, ab, b) = (schedule.alpha(t)?, schedule.alpha_bar(t)?, schedule.beta(t)?);
        let coef = b / (1.0 - ab).sqrt();
        let inv = 1.0 / a.sqrt();
        let sd = if t > 1 { b.sqrt() } else { 0.0 };
        for j in 0..n {
            for r in 0..2 {
                let z: f64 = if t > 1 { StandardNormal.sample(&mut rng) } else { 0.0 };
                x[(r, j)] = inv * (x[(r, j)] - coef * eps[(r, j)]) + sd * z;
            }
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(SampleOutput {
        samples: x,
        trajectory: traj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDescriptor {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Versioned JSON container for a trained denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub schedule: ScheduleDescriptor,
    pub concepts: ConceptSet,
    pub net: DenoiserNet,
}

impl Checkpoint {
    pub fn new(schedule: &NoiseSchedule, concepts: &ConceptSet, net: &DenoiserNet) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            schedule: ScheduleDescriptor {
                steps: schedule.steps(),
                beta_start: schedule.beta_start,
                beta_end: schedule.beta_end,
            },
            concepts: concepts.clone(),
            net: net.clone(),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a denoiser checkpoint: `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        check_len(ck.concepts.len(), ck.net.n_concepts())?;
        // re-validate through the checked constructors
        ConceptSet::new(ck.concepts.concepts.clone())?;
        Mlp::from_parts(ck.net.mlp.sizes().to_vec(), ck.net.mlp.activation(), ck.net.mlp.params().to_vec())?;
        check_len(ck.net.n_concepts * EMBED_DIM, ck.net.embedding.len())?;
        Ok(ck)
    }
}
