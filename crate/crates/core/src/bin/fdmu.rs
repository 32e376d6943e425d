use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fdmu::diffusion::{pretrain, sample, Checkpoint, ConceptSet, Condition, NoiseSchedule, PretrainConfig};
use fdmu::divergence::{boundedness, convergence_speed_index, DivergenceKind};
use fdmu::dynamics::{
    jacobian_at_equilibrium, perturbed_trajectory, speed_ranking_experiment, RankingConfig, TractableGame,
};
use fdmu::eval::{
    divergence_sweep, evaluate, sequential_multi_erase, stage_table, sweep_table, EvalSettings, SweepEntry,
};
use fdmu::gaussian::{closed_form, quadrature_divergence, DiagonalGaussian};
use fdmu::plot::{decay_plot, gradient_plot, samples_plot};
use fdmu::report::{
    concept_report_table, grad_log_table, metrics_table, ranking_table, samples_table, sha256_hex,
    trajectory_table, ExperimentManifest, Table,
};
use fdmu::unlearn::{unlearn, Mode, UnlearnConfig};
use fdmu::variational::{fit_estimate, scalar_batch, DEFAULT_STEPS};

/// f-divergence concept unlearning on a toy diffusion model.
#[derive(Debug, Parser)]
#[command(name = "fdmu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form and quadrature divergences between two Gaussians.
    Divergence(DivergenceArgs),
    /// Variational (critic-based) estimate from samples of two 1-D Gaussians.
    Estimate(EstimateArgs),
    /// Pretrain the conditional denoiser on the four-concept mixture.
    TrainDiffusion(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Erase one concept from a checkpoint.
    Unlearn(UnlearnArgs),
    /// Per-concept erase/preserve metrics of a checkpoint.
    Eval(EvalArgs),
    /// One unlearning run per divergence and mode.
    Sweep(SweepArgs),
    /// Erase several concepts one after another.
    MultiErase(MultiEraseArgs),
    /// Render SVG plots from CSV outputs.
    Plot(PlotArgs),
    /// Min-max flow, equilibrium spectra and convergence-speed ranking.
    Dynamics(DynamicsArgs),
    /// Re-run a manifest into a new directory and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct DivergenceArgs {
    /// Divergences to report (default: all).
    #[arg(long, value_delimiter = ',')]
    kind: Vec<DivergenceKind>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1")]
    p_mean: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    p_var: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    q_mean: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    q_var: Vec<f64>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, default_value = "kl")]
    kind: DivergenceKind,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    p_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    p_sd: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    q_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    q_sd: f64,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 2000)]
    samples_per_concept: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data seed (defaults to the training seed).
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Concept label or `null`; repeatable (default: every concept).
    #[arg(long, value_delimiter = ',')]
    concept: Vec<String>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunConfigArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML file with unlearning settings (defaults apply when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 500)]
    eval_samples: usize,
    #[arg(long, default_value_t = 3)]
    eval_seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

impl RunConfigArgs {
    fn config(&self) -> Result<UnlearnConfig> {
        let base = match &self.config {
            Some(p) => UnlearnConfig::from_toml(
                &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            )?,
            None => UnlearnConfig::default(),
        };
        Ok(base.with_overrides(&self.overrides)?)
    }

    fn settings(&self) -> EvalSettings {
        EvalSettings {
            n_per_concept: self.eval_samples,
            seed: self.eval_seed,
        }
    }
}

#[derive(Debug, Args)]
struct UnlearnArgs {
    #[command(flatten)]
    run: RunConfigArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "kl,hellinger2,chi2")]
    divergences: Vec<DivergenceKind>,
    #[arg(long, value_delimiter = ',', default_value = "closed_form")]
    modes: Vec<String>,
}

#[derive(Debug, Args)]
struct MultiEraseArgs {
    #[command(flatten)]
    run: RunConfigArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotKindArg {
    /// Gradient norm per step from metrics or gradient-log CSVs.
    Gradients,
    /// Distance to equilibrium from trajectory CSVs.
    Decay,
    /// Scatter of a samples CSV.
    Samples,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKindArg,
    /// `label=path` (or just `path`) per input CSV.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    #[arg(long, value_delimiter = ',', default_value = "hellinger2,js,kl,rkl,chi2")]
    divergences: Vec<DivergenceKind>,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    target_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    target_sd: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    perturbation: f64,
    #[arg(long, default_value_t = 30.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Step size of the discrete descent–ascent comparison.
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    run(cli.command, args)
}

fn run(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::Divergence(a) => cmd_divergence(a),
        Command::Estimate(a) => cmd_estimate(a, args),
        Command::TrainDiffusion(a) => cmd_train(a, args),
        Command::Sample(a) => cmd_sample(a),
        Command::Unlearn(a) => cmd_unlearn(a, args),
        Command::Eval(a) => cmd_eval(a, args),
        Command::Sweep(a) => cmd_sweep(a, args),
        Command::MultiErase(a) => cmd_multi_erase(a, args),
        Command::Plot(a) => cmd_plot(a),
        Command::Dynamics(a) => cmd_dynamics(a, args),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn manifest(command: &str, args: &[String]) -> ExperimentManifest {
    let id = sha256_hex(args.join("\u{1f}").as_bytes());
    ExperimentManifest::new(command, args.to_vec(), id[..16].to_string())
}

fn write_table(dir: &Path, name: &str, table: &Table, m: &mut ExperimentManifest) -> Result<()> {
    table.write(&dir.join(name))?;
    m.record_file(dir, name)?;
    Ok(())
}

fn finish(dir: &Path, m: &ExperimentManifest) -> Result<()> {
    m.save(&dir.join("manifest.toml"))?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, NoiseSchedule)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let s = ck.schedule()?;
    Ok((ck, s))
}

fn cmd_divergence(a: DivergenceArgs) -> Result<()> {
    let p = DiagonalGaussian::new(a.p_mean, a.p_var)?;
    let q = DiagonalGaussian::new(a.q_mean, a.q_var)?;
    let kinds = if a.kind.is_empty() { DivergenceKind::ALL.to_vec() } else { a.kind };
    let mut t = Table::new(["divergence", "closed_form", "quadrature", "speed_index", "bound"]);
    let cell = |r: fdmu::Result<f64>| r.map(|v| v.to_string()).unwrap_or_default();
    for k in kinds {
        let spec = k.spec();
        let oracle = if p.dim() == 1 { cell(quadrature_divergence(&spec, &p, &q)) } else { String::new() };
        t.push(vec![
            k.to_string(),
            cell(closed_form(&spec, &p, &q)),
            oracle,
            cell(convergence_speed_index(&spec)),
            boundedness(&spec).map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    match a.out {
        Some(p) => t.write(&p)?,
        None => print!("{}", t.to_csv_string()?),
    }
    Ok(())
}

fn normal_draws(mean: f64, sd: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let d = Normal::new(mean, sd).context("invalid normal parameters")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| d.sample(&mut rng)).collect())
}

fn cmd_estimate(a: EstimateArgs, args: Vec<String>) -> Result<()> {
    prepare_dir(&a.out_dir)?;
    let spec = a.kind.spec();
    let p = normal_draws(a.p_mean, a.p_sd, a.samples, a.seed)?;
    let q = normal_draws(a.q_mean, a.q_sd, a.samples, a.seed.wrapping_add(1))?;
    let (est, _) = fit_estimate(&spec, &scalar_batch(&p), &scalar_batch(&q), a.steps, a.seed)?;
    let pg = DiagonalGaussian::scalar(a.p_mean, a.p_sd * a.p_sd)?;
    let qg = DiagonalGaussian::scalar(a.q_mean, a.q_sd * a.q_sd)?;
    let exact = closed_form(&spec, &pg, &qg).or_else(|_| quadrature_divergence(&spec, &pg, &qg))?;
    let mut m = manifest("estimate", &args);
    m.seeds.push(a.seed);
    let mut trace = Table::new(["step", "lower_bound"]);
    for (i, v) in est.lower_bound_trace.iter().enumerate() {
        trace.push(vec![(i + 1).to_string(), v.to_string()])?;
    }
    write_table(&a.out_dir, "trace.csv", &trace, &mut m)?;
    let mut summary = Table::new(["divergence", "estimate", "exact", "steps"]);
    summary.push(vec![
        a.kind.to_string(),
        est.value.to_string(),
        exact.to_string(),
        est.discriminator_steps.to_string(),
    ])?;
    write_table(&a.out_dir, "estimate.csv", &summary, &mut m)?;
    println!("{}: estimate {:.6}, exact {:.6}", a.kind, est.value, exact);
    finish(&a.out_dir, &m)
}

fn cmd_train(a: TrainArgs, args: Vec<String>) -> Result<()> {
    prepare_dir(&a.out_dir)?;
    let concepts = ConceptSet::four_corners();
    let schedule = NoiseSchedule::default_toy();
    let data = concepts.dataset(a.samples_per_concept, a.data_seed.unwrap_or(a.seed))?;
    let config = PretrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..PretrainConfig::default()
    };
    let (net, losses) = pretrain(&data, concepts.len(), &schedule, &config)?;
    let mut m = manifest("train-diffusion", &args);
    m.seeds.extend([a.seed, a.data_seed.unwrap_or(a.seed)]);
    m.config = toml::Table::try_from(&config)?;
    Checkpoint::new(&schedule, &concepts, &net).save(&a.out_dir.join("base.json"))?;
    m.checkpoint_hashes.insert("base".into(), net.checksum());
    let mut t = Table::new(["epoch", "loss"]);
    for (i, l) in losses.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), l.to_string()])?;
    }
    write_table(&a.out_dir, "losses.csv", &t, &mut m)?;
    let reports = evaluate(&net, &concepts, &schedule, 500, 3)?;
    write_table(&a.out_dir, "eval.csv", &concept_report_table(&reports)?, &mut m)?;
    for r in &reports {
        println!("{}: accuracy {:.3}", r.concept, r.accuracy);
    }
    finish(&a.out_dir, &m)
}

fn condition(concepts: &ConceptSet, label: &str) -> Result<Condition> {
    if label == fdmu::unlearn::NULL_ANCHOR {
        Ok(Condition::Null)
    } else {
        Ok(Condition::Concept(concepts.index_of(label)?))
    }
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let (ck, schedule) = load_checkpoint(&a.checkpoint)?;
    let labels: Vec<String> = if a.concept.is_empty() {
        ck.concepts.concepts().iter().map(|c| c.label.clone()).collect()
    } else {
        a.concept
    };
    let mut sets = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let cond = condition(&ck.concepts, l)?;
        sets.push((l.clone(), sample(&ck.net, cond, &schedule, a.n, a.seed.wrapping_add(i as u64), false)?.samples));
    }
    let refs: Vec<(String, &nalgebra::DMatrix<f64>)> = sets.iter().map(|(l, m)| (l.clone(), m)).collect();
    samples_table(&refs)?.write(&a.out)?;
    Ok(())
}

fn cmd_unlearn(a: UnlearnArgs, args: Vec<String>) -> Result<()> {
    let r = &a.run;
    prepare_dir(&r.out_dir)?;
    let config = r.config()?;
    let (ck, schedule) = load_checkpoint(&r.checkpoint)?;
    let base_sum = ck.net.checksum();
    let out = unlearn(&ck.net, &ck.concepts, &schedule, &config)?;
    ensure!(ck.net.checksum() == base_sum, "frozen model changed during unlearning");
    let labels: Vec<String> = ck.concepts.concepts().iter().map(|c| c.label.clone()).collect();
    let mut m = manifest("unlearn", &args);
    m.seeds.push(config.seed);
    m.config = toml::Table::try_from(&config)?;
    m.checkpoint_hashes.insert("base".into(), base_sum);
    m.checkpoint_hashes.insert("unlearned".into(), out.net.checksum());
    Checkpoint::new(&schedule, &ck.concepts, &out.net).save(&r.out_dir.join("unlearned.json"))?;
    std::fs::write(r.out_dir.join("config.toml"), config.to_toml()?)?;
    write_table(&r.out_dir, "metrics.csv", &metrics_table(&out.metrics, &labels)?, &mut m)?;
    if !out.grad_log.is_empty() {
        write_table(&r.out_dir, "grad_log.csv", &grad_log_table(&out.grad_log)?, &mut m)?;
    }
    let reports = evaluate(&out.net, &ck.concepts, &schedule, r.eval_samples, r.eval_seed)?;
    write_table(&r.out_dir, "eval.csv", &concept_report_table(&reports)?, &mut m)?;
    for rep in &reports {
        println!("{}: accuracy {:.3}, w2 {:.3}", rep.concept, rep.accuracy, rep.w2);
    }
    let n = r.eval_samples.min(SCATTER_SAMPLES);
    for (stage, net) in [("before", &ck.net), ("after", &out.net)] {
        let name = format!("samples_{stage}.csv");
        write_table(&r.out_dir, &name, &concept_samples(net, &ck.concepts, &schedule, n, r.eval_seed)?, &mut m)?;
        let title = format!("Samples {stage} unlearning {}", config.target);
        write_plot(&r.out_dir, &format!("samples_{stage}.svg"), samples_plot(&title, &r.out_dir.join(&name))?, &mut m)?;
    }
    let source = if out.grad_log.is_empty() { "metrics.csv" } else { "grad_log.csv" };
    let label = if out.grad_log.is_empty() { config.divergence.to_string() } else { String::new() };
    let plot = gradient_plot(&[(label, &r.out_dir.join(source))])?;
    write_plot(&r.out_dir, "gradients.svg", plot, &mut m)?;
    finish(&r.out_dir, &m)
}

const SCATTER_SAMPLES: usize = 300;

fn concept_samples(
    net: &fdmu::diffusion::DenoiserNet,
    concepts: &ConceptSet,
    schedule: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<Table> {
    let mut sets = Vec::with_capacity(concepts.len());
    for (i, c) in concepts.concepts().iter().enumerate() {
        let stream = seed.wrapping_mul(0x100).wrapping_add(i as u64);
        sets.push((c.label.clone(), sample(net, Condition::Concept(i), schedule, n, stream, false)?.samples));
    }
    let refs: Vec<(String, &nalgebra::DMatrix<f64>)> = sets.iter().map(|(l, m)| (l.clone(), m)).collect();
    Ok(samples_table(&refs)?)
}

fn write_plot(dir: &Path, name: &str, plot: fdmu::plot::Plot, m: &mut ExperimentManifest) -> Result<()> {
    if plot.write(&dir.join(name))? {
        m.record_file(dir, name)?;
    } else {
        eprintln!("warning: no data to plot; {name} not written");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, args: Vec<String>) -> Result<()> {
    prepare_dir(&a.out_dir)?;
    let (ck, schedule) = load_checkpoint(&a.checkpoint)?;
    let reports = evaluate(&ck.net, &ck.concepts, &schedule, a.n, a.seed)?;
    let mut m = manifest("eval", &args);
    m.seeds.push(a.seed);
    m.checkpoint_hashes.insert("evaluated".into(), ck.net.checksum());
    write_table(&a.out_dir, "eval.csv", &concept_report_table(&reports)?, &mut m)?;
    for r in &reports {
        println!("{}: accuracy {:.3}, mean shift {:.3}, w2 {:.3}", r.concept, r.accuracy, r.mean_shift, r.w2);
    }
    finish(&a.out_dir, &m)
}

fn cmd_sweep(a: SweepArgs, args: Vec<String>) -> Result<()> {
    let r = &a.run;
    prepare_dir(&r.out_dir)?;
    let config = r.config()?;
    let (ck, schedule) = load_checkpoint(&r.checkpoint)?;
    let modes = a
        .modes
        .iter()
        .map(|s| s.parse::<Mode>())
        .collect::<fdmu::Result<Vec<_>>>()?;
    let entries: Vec<SweepEntry> = modes
        .iter()
        .flat_map(|&mode| a.divergences.iter().map(move |&divergence| SweepEntry { divergence, mode }))
        .collect();
    let rows = divergence_sweep(&ck.net, &ck.concepts, &schedule, &entries, &config, r.settings());
    let mut m = manifest("sweep", &args);
    m.seeds.push(config.seed);
    m.config = toml::Table::try_from(&config)?;
    m.checkpoint_hashes.insert("base".into(), ck.net.checksum());
    write_table(&r.out_dir, "sweep.csv", &sweep_table(&rows, &ck.concepts)?, &mut m)?;
    for row in &rows {
        match &row.error {
            None => println!(
                "{} {}: target {:.3}, untouched {:.3}, w2 {:.3}",
                row.divergence,
                row.mode.as_str(),
                row.target_accuracy,
                row.untouched_accuracy,
                row.untouched_w2
            ),
            Some(e) => println!("{} {}: failed ({e})", row.divergence, row.mode.as_str()),
        }
    }
    finish(&r.out_dir, &m)
}

fn cmd_multi_erase(a: MultiEraseArgs, args: Vec<String>) -> Result<()> {
    let r = &a.run;
    prepare_dir(&r.out_dir)?;
    let config = r.config()?;
    let (ck, schedule) = load_checkpoint(&r.checkpoint)?;
    let (net, stages) = sequential_multi_erase(&ck.net, &ck.concepts, &schedule, &a.targets, &config, r.settings())?;
    let mut m = manifest("multi-erase", &args);
    m.seeds.extend((0..a.targets.len() as u64).map(|i| config.seed.wrapping_add(i)));
    m.config = toml::Table::try_from(&config)?;
    m.checkpoint_hashes.insert("base".into(), ck.net.checksum());
    m.checkpoint_hashes.insert("unlearned".into(), net.checksum());
    Checkpoint::new(&schedule, &ck.concepts, &net).save(&r.out_dir.join("unlearned.json"))?;
    write_table(&r.out_dir, "stages.csv", &stage_table(&stages)?, &mut m)?;
    if let Some(last) = stages.last() {
        for rep in &last.reports {
            println!("{}: accuracy {:.3}", rep.concept, rep.accuracy);
        }
    }
    finish(&r.out_dir, &m)
}

fn split_input(s: &str) -> (String, PathBuf) {
    match s.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(s);
            let label = p.file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            (label, p)
        }
    }
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let inputs: Vec<(String, PathBuf)> = a.inputs.iter().map(|s| split_input(s)).collect();
    let refs: Vec<(String, &Path)> = inputs.iter().map(|(l, p)| (l.clone(), p.as_path())).collect();
    let mut plot = match a.kind {
        PlotKindArg::Gradients => gradient_plot(&refs)?,
        PlotKindArg::Decay => decay_plot(&refs)?,
        PlotKindArg::Samples => {
            if refs.len() != 1 {
                bail!("samples plots take exactly one input");
            }
            samples_plot("Generated samples", refs[0].1)?
        }
    };
    if let Some(t) = a.title {
        plot.title = t;
    }
    if plot.write(&a.out)? {
        println!("wrote {}", a.out.display());
    } else {
        eprintln!("warning: no data to plot; {} not written", a.out.display());
    }
    Ok(())
}

fn cmd_dynamics(a: DynamicsArgs, args: Vec<String>) -> Result<()> {
    prepare_dir(&a.out_dir)?;
    let cfg = RankingConfig {
        target_mean: a.target_mean,
        target_sd: a.target_sd,
        perturbation: a.perturbation,
        horizon: a.horizon,
        dt: a.dt,
        // one recorded state per 0.1 time units
        record_every: (0.1 / a.dt).round().max(1.0) as usize,
        learning_rate: a.learning_rate,
    };
    let mut m = manifest("dynamics", &args);
    m.config = toml::Table::try_from(cfg)?;
    let mut traj_inputs = Vec::new();
    for &kind in &a.divergences {
        let game = TractableGame::scalar(a.target_mean, a.target_sd, kind)?;
        let report = jacobian_at_equilibrium(&game)?;
        let name = format!("jacobian_{kind}.json");
        std::fs::write(a.out_dir.join(&name), serde_json::to_string_pretty(&report)?)?;
        m.record_file(&a.out_dir, &name)?;
        let (game, traj) = perturbed_trajectory(kind, &cfg)?;
        let name = format!("trajectory_{kind}.csv");
        write_table(&a.out_dir, &name, &trajectory_table(&game, &traj)?, &mut m)?;
        traj_inputs.push((kind.to_string(), a.out_dir.join(name)));
        println!(
            "{kind}: hurwitz {}, bound slack {:.3e}, K_TP rank {}",
            report.hurwitz, report.bound_slack, report.k_tp_rank
        );
        if !report.k_tp_full_row_rank {
            eprintln!("warning: {kind}: off-diagonal block is rank deficient");
        }
    }
    let rows = speed_ranking_experiment(&a.divergences, &cfg)?;
    write_table(&a.out_dir, "ranking.csv", &ranking_table(&rows)?, &mut m)?;
    for r in &rows {
        println!(
            "{}: decay rate {:.4} (discrete {:.4}), index {}",
            r.divergence, r.decay_rate, r.discrete_decay_rate, r.speed_index
        );
    }
    let refs: Vec<(String, &Path)> = traj_inputs.iter().map(|(l, p)| (l.clone(), p.as_path())).collect();
    write_plot(&a.out_dir, "decay.svg", decay_plot(&refs)?, &mut m)?;
    finish(&a.out_dir, &m)
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let original = ExperimentManifest::load(&a.manifest)?;
    let mut args = original.args.clone();
    let pos = args
        .iter()
        .position(|s| s == "--out-dir")
        .context("manifest arguments have no --out-dir")?;
    ensure!(pos + 1 < args.len(), "manifest --out-dir has no value");
    args[pos + 1] = a.out_dir.display().to_string();
    let cli = Cli::try_parse_from(std::iter::once("fdmu".to_string()).chain(args.iter().cloned()))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("refusing to replay a replay");
    }
    run(cli.command, args)?;
    let changed = original.changed_files(&a.out_dir)?;
    if changed.is_empty() {
        println!("replay matches: {} files identical", original.metric_files.len());
        Ok(())
    } else {
        bail!("replay differs in: {}", changed.join(", "))
    }
}
