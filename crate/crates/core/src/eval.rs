//! Erase/preserve metrics on generated samples.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample, Condition, ConceptSet, DenoiserNet, NoiseSchedule};
use crate::divergence::DivergenceKind;
use crate::error::{check_len, Error, Result};
use crate::report::{num, Table};
use crate::unlearn::{unlearn, Mode, UnlearnConfig, UnlearnOutcome};

pub const SLICED_PROJECTIONS: usize = 64;
pub const PROJECTION_SEED: u64 = 0x51ce;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub concept: String,
    /// Fraction of samples whose nearest component is this concept.
    pub accuracy: f64,
    /// Distance between the sample mean and the component mean.
    pub mean_shift: f64,
    /// Sliced 2-Wasserstein distance to reference draws of the component.
    pub w2: f64,
}

/// Index of the component minimizing `‖x − μ‖² / σ²`.
pub fn classify(concepts: &ConceptSet, x: [f64; 2]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in concepts.concepts().iter().enumerate() {
        let d = ((x[0] - c.mean[0]).powi(2) + (x[1] - c.mean[1]).powi(2)) / c.variance;
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Fraction of columns classified as `index`.
pub fn accuracy(concepts: &ConceptSet, samples: &DMatrix<f64>, index: usize) -> f64 {
    if samples.ncols() == 0 {
        return 0.0;
    }
    let hits = samples
        .column_iter()
        .filter(|c| classify(concepts, [c[0], c[1]]) == index)
        .count();
    hits as f64 / samples.ncols() as f64
}

/// Fraction of columns within `k` standard deviations of component `index`.
pub fn within_radius(concepts: &ConceptSet, samples: &DMatrix<f64>, index: usize, k: f64) -> Result<f64> {
    let c = concepts.get(index)?;
    if samples.ncols() == 0 {
        return Ok(0.0);
    }
    let r2 = k * k * c.variance;
    let hits = samples
        .column_iter()
        .filter(|s| (s[0] - c.mean[0]).powi(2) + (s[1] - c.mean[1]).powi(2) <= r2)
        .count();
    Ok(hits as f64 / samples.ncols() as f64)
}

fn quantile_sorted(v: &[f64], level: f64) -> f64 {
    let pos = level * v.len() as f64 - 0.5;
    if pos <= 0.0 {
        return v[0];
    }
    let i = pos.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let w = pos - i as f64;
    v[i] * (1.0 - w) + v[i + 1] * w
}

/// Sliced 2-Wasserstein distance between two 2-D point clouds, averaged over
/// random directions drawn from a fixed stream.
pub fn sliced_w2(a: &DMatrix<f64>, b: &DMatrix<f64>, projections: usize, seed: u64) -> Result<f64> {
    check_len(a.nrows(), b.nrows())?;
    if a.ncols() == 0 || b.ncols() == 0 || projections == 0 {
        return Err(Error::InvalidInput("sliced W2 needs non-empty inputs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = a.ncols().max(b.ncols());
    let mut total = 0.0;
    for _ in 0..projections {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let project = |x: &DMatrix<f64>| {
            let mut v: Vec<f64> = x.column_iter().map(|col| c * col[0] + s * col[1]).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let (pa, pb) = (project(a), project(b));
        let mut acc = 0.0;
        for i in 0..m {
            let level = (i as f64 + 0.5) / m as f64;
            acc += (quantile_sorted(&pa, level) - quantile_sorted(&pb, level)).powi(2);
        }
        total += acc / m as f64;
    }
    Ok((total / projections as f64).sqrt())
}

/// Per-concept erase/preserve report for samples generated by `net`.
pub fn evaluate(
    net: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    n_per_concept: usize,
    seed: u64,
) -> Result<Vec<ConceptReport>> {
    if n_per_concept == 0 {
        return Err(Error::InvalidInput("n_per_concept must be positive".into()));
    }
    let mut reports = Vec::with_capacity(concepts.len());
    for (i, c) in concepts.concepts().iter().enumerate() {
        let stream = seed.wrapping_mul(0x100).wrapping_add(i as u64);
        let generated = sample(net, Condition::Concept(i), schedule, n_per_concept, stream, false)?.samples;
        let mut rng = ChaCha8Rng::seed_from_u64(stream ^ 0x7e7e_7e7e);
        let reference = concepts.sample(i, n_per_concept, &mut rng)?;
        let mean = generated.column_mean();
        let mean_shift = ((mean[0] - c.mean[0]).powi(2) + (mean[1] - c.mean[1]).powi(2)).sqrt();
        reports.push(ConceptReport {
            concept: c.label.clone(),
            accuracy: accuracy(concepts, &generated, i),
            mean_shift,
            w2: sliced_w2(&generated, &reference, SLICED_PROJECTIONS, PROJECTION_SEED)?,
        });
    }
    Ok(reports)
}

/// Indices of concepts that are neither the target nor the anchor.
pub fn untouched_indices(concepts: &ConceptSet, config: &UnlearnConfig) -> Vec<usize> {
    concepts
        .concepts()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.label != config.target && c.label != config.anchor)
        .map(|(i, _)| i)
        .collect()
}

/// Mean accuracy and mean sliced W2 over the given concepts.
pub fn summarize(reports: &[ConceptReport], indices: &[usize]) -> (f64, f64) {
    if indices.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = indices.len() as f64;
    (
        indices.iter().map(|&i| reports[i].accuracy).sum::<f64>() / n,
        indices.iter().map(|&i| reports[i].w2).sum::<f64>() / n,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub divergence: DivergenceKind,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub divergence: DivergenceKind,
    pub mode: Mode,
    /// `None` on success, otherwise the run's error message.
    pub error: Option<String>,
    pub reports: Vec<ConceptReport>,
    pub target_accuracy: f64,
    pub untouched_accuracy: f64,
    pub untouched_w2: f64,
    pub mean_grad_norm: f64,
    pub final_mse: f64,
}

/// Evaluation settings shared by sweeps and chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_per_concept: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_per_concept: 500,
            seed: 3,
        }
    }
}

fn sweep_one(
    base: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    entry: SweepEntry,
    common: &UnlearnConfig,
    settings: EvalSettings,
) -> SweepRow {
    let mut config = common.clone();
    config.divergence = entry.divergence;
    config.mode = entry.mode;
    let failed = |e: Error| SweepRow {
        divergence: entry.divergence,
        mode: entry.mode,
        error: Some(e.to_string()),
        reports: Vec::new(),
        target_accuracy: f64::NAN,
        untouched_accuracy: f64::NAN,
        untouched_w2: f64::NAN,
        mean_grad_norm: f64::NAN,
        final_mse: f64::NAN,
    };
    let run = || -> Result<SweepRow> {
        let out: UnlearnOutcome = unlearn(base, concepts, schedule, &config)?;
        let reports = evaluate(&out.net, concepts, schedule, settings.n_per_concept, settings.seed)?;
        let (untouched_accuracy, untouched_w2) = summarize(&reports, &untouched_indices(concepts, &config));
        let m = &out.metrics;
        Ok(SweepRow {
            divergence: entry.divergence,
            mode: entry.mode,
            error: None,
            target_accuracy: reports[concepts.index_of(&config.target)?].accuracy,
            untouched_accuracy,
            untouched_w2,
            mean_grad_norm: if m.is_empty() {
                0.0
            } else {
                m.iter().map(|s| s.grad_norm).sum::<f64>() / m.len() as f64
            },
            final_mse: m.last().map_or(0.0, |s| s.mse),
            reports,
        })
    };
    run().unwrap_or_else(failed)
}

/// One unlearning run per entry under the shared config; failed runs are
/// recorded and the sweep continues. Rows come back in entry order.
pub fn divergence_sweep(
    base: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    entries: &[SweepEntry],
    common: &UnlearnConfig,
    settings: EvalSettings,
) -> Vec<SweepRow> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(entries.len().max(1));
    let mut rows: Vec<Option<SweepRow>> = vec![None; entries.len()];
    for chunk in (0..entries.len()).collect::<Vec<_>>().chunks(workers) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let e = entries[i];
                    (i, scope.spawn(move || sweep_one(base, concepts, schedule, e, common, settings)))
                })
                .collect();
            for (i, h) in handles {
                rows[i] = Some(h.join().expect("sweep worker panicked"));
            }
        });
    }
    rows.into_iter().map(|r| r.expect("every entry ran")).collect()
}

/// Fixed-column sweep table; failed runs keep their row with empty metrics.
pub fn sweep_table(rows: &[SweepRow], concepts: &ConceptSet) -> Result<Table> {
    let labels: Vec<&str> = concepts.concepts().iter().map(|c| c.label.as_str()).collect();
    let mut header: Vec<String> = [
        "divergence",
        "mode",
        "status",
        "error",
        "target_accuracy",
        "untouched_accuracy",
        "untouched_w2",
        "mean_grad_norm",
        "final_mse",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    header.extend(labels.iter().map(|l| format!("acc_{l}")));
    header.extend(labels.iter().map(|l| format!("w2_{l}")));
    let mut t = Table::new(header);
    let cell = |v: f64| if v.is_nan() { String::new() } else { num(v) };
    for r in rows {
        let mut row = vec![
            r.divergence.as_str().to_string(),
            r.mode.as_str().to_string(),
            if r.error.is_none() { "ok" } else { "failed" }.to_string(),
            r.error.clone().unwrap_or_default(),
            cell(r.target_accuracy),
            cell(r.untouched_accuracy),
            cell(r.untouched_w2),
            cell(r.mean_grad_norm),
            cell(r.final_mse),
        ];
        if r.reports.len() == labels.len() {
            row.extend(r.reports.iter().map(|c| num(c.accuracy)));
            row.extend(r.reports.iter().map(|c| num(c.w2)));
        } else {
            row.extend(std::iter::repeat_n(String::new(), 2 * labels.len()));
        }
        t.push(row)?;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub target: String,
    pub reports: Vec<ConceptReport>,
}

/// Erases `targets` one after another, each run starting from the previous
/// result; stage `i` uses seed `config.seed + i`.
pub fn sequential_multi_erase(
    base: &DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    targets: &[String],
    config: &UnlearnConfig,
    settings: EvalSettings,
) -> Result<(DenoiserNet, Vec<StageReport>)> {
    for (i, t) in targets.iter().enumerate() {
        concepts.index_of(t)?;
        if targets[..i].contains(t) {
            return Err(Error::InvalidInput(format!("target `{t}` listed twice")));
        }
        if *t == config.anchor {
            return Err(Error::InvalidInput(format!("target `{t}` is also the anchor")));
        }
    }
    let mut net = base.clone();
    let mut stages = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        let mut c = config.clone();
        c.target = t.clone();
        c.seed = config.seed.wrapping_add(i as u64);
        net = unlearn(&net, concepts, schedule, &c)?.net;
        stages.push(StageReport {
            stage: i,
            target: t.clone(),
            reports: evaluate(&net, concepts, schedule, settings.n_per_concept, settings.seed)?,
        });
    }
    Ok((net, stages))
}

pub fn stage_table(stages: &[StageReport]) -> Result<Table> {
    let mut t = Table::new(["stage", "target", "concept", "accuracy", "mean_shift", "w2"]);
    for s in stages {
        for r in &s.reports {
            t.push(vec![
                s.stage.to_string(),
                s.target.clone(),
                r.concept.clone(),
                num(r.accuracy),
                num(r.mean_shift),
                num(r.w2),
            ])?;
        }
    }
    Ok(t)
}
