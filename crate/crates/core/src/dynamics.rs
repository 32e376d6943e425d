//! Continuous-time min-max flow on a tractable Gaussian game: a generator
//! `N(φ, σ²)` chasing a fixed target `N(μ*, σ²)` against an affine critic
//! `V_ω(x) = κ(ω₀ + ω₁ᵀx)` squashed by the divergence's output activation.
//!
//! All expectations are population values from tensor Gauss–Hermite rules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{convergence_speed_index, DivergenceKind, DivergenceSpec};
use crate::error::{check_len, Error, Result};
use crate::gaussian::DiagonalGaussian;
use crate::quadrature::GaussHermite;

pub const QUADRATURE_NODES: usize = 48;
pub const FD_STEP: f64 = 1e-5;
pub const EQUILIBRIUM_TOL: f64 = 1e-6;
pub const BLOWUP_NORM: f64 = 1e6;
/// Fraction of a trajectory (from the end) used for decay-rate fits.
pub const FIT_TAIL: f64 = 0.6;

#[derive(Debug, Clone)]
pub struct TractableGame {
    target: DiagonalGaussian,
    spec: DivergenceSpec,
    /// Critic gain `1 / g_f′(v*)`.
    gain: f64,
    /// Equilibrium critic offset `v*` with `g_f(v*) = f′(1)`.
    v_star: f64,
    rule: GaussHermite,
}

/// Flattened `(φ, ω)` with the flow time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynState {
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    pub time: f64,
}

impl DynState {
    fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.phi.len() + self.omega.len(),
            self.phi.iter().chain(&self.omega).copied(),
        )
    }

    fn from_vector(v: &DVector<f64>, dim: usize, time: f64) -> Self {
        DynState {
            phi: v.rows(0, dim).iter().copied().collect(),
            omega: v.rows(dim, v.len() - dim).iter().copied().collect(),
            time,
        }
    }
}

impl TractableGame {
    /// Game whose generator shares the target's (diagonal) variance.
    pub fn new(target: DiagonalGaussian, kind: DivergenceKind) -> Result<Self> {
        let spec = kind.spec();
        if !spec.strictly_convex_conjugate || spec.f_double_prime_at_1.is_none() {
            return Err(Error::Unsupported {
                operation: "min-max flow (conjugate not strictly convex)",
                divergence: kind.as_str(),
            });
        }
        let v_star = spec.g_f_inverse(spec.f_prime(1.0))?;
        let slope = spec.g_f_prime(v_star);
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::Dynamics(format!("activation slope {slope} at equilibrium")));
        }
        Ok(TractableGame {
            target,
            spec,
            gain: 1.0 / slope,
            v_star,
            rule: GaussHermite::new(QUADRATURE_NODES),
        })
    }

    /// Scalar game with target `N(mean, sd²)`.
    pub fn scalar(mean: f64, sd: f64, kind: DivergenceKind) -> Result<Self> {
        TractableGame::new(DiagonalGaussian::scalar(mean, sd * sd)?, kind)
    }

    pub fn spec(&self) -> &DivergenceSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn n_critic(&self) -> usize {
        self.dim() + 1
    }

    pub fn equilibrium(&self) -> DynState {
        let mut omega = vec![0.0; self.n_critic()];
        omega[0] = self.v_star / self.gain;
        DynState {
            phi: self.target.mean().to_vec(),
            omega,
            time: 0.0,
        }
    }

    fn critic_raw(&self, omega: &[f64], x: &[f64]) -> f64 {
        self.gain * (omega[0] + omega[1..].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
    }

    /// Accumulates `h(x, weight)` over the rule for `N(mean, diag(target variance))`.
    fn expect<F: FnMut(&[f64], f64) -> Result<()>>(&self, mean: &[f64], mut h: F) -> Result<()> {
        let d = self.dim();
        let sd: Vec<f64> = self.target.variance().iter().map(|v| v.sqrt()).collect();
        let n = self.rule.nodes.len();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        loop {
            let mut w = 1.0;
            for k in 0..d {
                x[k] = mean[k] + sd[k] * self.rule.nodes[idx[k]];
                w *= self.rule.weights[idx[k]];
            }
            h(&x, w)?;
            let mut k = 0;
            loop {
                if k == d {
                    return Ok(());
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn check_state(&self, state: &DynState) -> Result<()> {
        check_len(self.dim(), state.phi.len())?;
        check_len(self.n_critic(), state.omega.len())
    }

    /// Population objective `E_target[g_f(V)] − E_gen[f*(g_f(V))]`.
    pub fn objective(&self, state: &DynState) -> Result<f64> {
        self.check_state(state)?;
        let mut acc = 0.0;
        self.expect(self.target.mean(), |x, w| {
            acc += w * self.spec.g_f(self.critic_raw(&state.omega, x));
            Ok(())
        })?;
        self.expect(&state.phi, |x, w| {
            acc -= w * self.spec.conjugate_of_activation(self.critic_raw(&state.omega, x))?;
            Ok(())
        })?;
        Ok(acc)
    }
}

/// `(φ̇, ω̇) = (−∇_φ J, +∇_ω J)`.
pub fn flow_rhs(game: &TractableGame, state: &DynState) -> Result<(Vec<f64>, Vec<f64>)> {
    game.check_state(state)?;
    let d = game.dim();
    let k = game.gain;
    let mut omega_dot = vec![0.0; d + 1];
    game.expect(game.target.mean(), |x, w| {
        let v = game.critic_raw(&state.omega, x);
        let s = w * k * game.spec.g_f_prime(v);
        omega_dot[0] += s;
        for i in 0..d {
            omega_dot[i + 1] += s * x[i];
        }
        Ok(())
    })?;
    // pathwise: ∇_φ E_{x~N(φ,σ²)}[f*(g(V(x)))] = E[(f*∘g)′(V) κ ω₁]
    let mut mean_slope = 0.0;
    game.expect(&state.phi, |x, w| {
        let v = game.critic_raw(&state.omega, x);
        let c = game.spec.conjugate_of_activation_prime(v)?;
        let dom = game.spec.g_f(v);
        if !game.spec.f_star_domain.contains(dom) && dom.is_finite() {
            return Err(Error::Domain {
                what: "critic output",
                value: dom,
                lower: game.spec.f_star_domain.lower,
                upper: game.spec.f_star_domain.upper,
            });
        }
        let s = w * k * c;
        mean_slope += w * c;
        omega_dot[0] -= s;
        for i in 0..d {
            omega_dot[i + 1] -= s * x[i];
        }
        Ok(())
    })?;
    let phi_dot: Vec<f64> = (0..d).map(|i| mean_slope * k * state.omega[i + 1]).collect();
    if phi_dot.iter().chain(&omega_dot).any(|v| !v.is_finite()) {
        return Err(Error::Dynamics(format!("non-finite flow at t = {}", state.time)));
    }
    Ok((phi_dot, omega_dot))
}

fn rhs_vector(game: &TractableGame, v: &DVector<f64>, time: f64) -> Result<DVector<f64>> {
    let s = DynState::from_vector(v, game.dim(), time);
    let (p, o) = flow_rhs(game, &s)?;
    Ok(DVector::from_iterator(p.len() + o.len(), p.into_iter().chain(o)))
}

/// Classical RK4 from `initial` to `initial.time + horizon`, keeping every
/// `record_every`-th state (plus the first and last).
pub fn integrate(
    game: &TractableGame,
    initial: &DynState,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<DynState>> {
    game.check_state(initial)?;
    if !(dt > 0.0 && horizon >= 0.0) || record_every == 0 {
        return Err(Error::InvalidInput("need dt > 0, horizon ≥ 0 and record_every ≥ 1".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let mut y = initial.to_vector();
    let mut t = initial.time;
    let mut out = vec![initial.clone()];
    for n in 1..=steps {
        let k1 = rhs_vector(game, &y, t)?;
        let k2 = rhs_vector(game, &(&y + &k1 * (dt / 2.0)), t + dt / 2.0)?;
        let k3 = rhs_vector(game, &(&y + &k2 * (dt / 2.0)), t + dt / 2.0)?;
        let k4 = rhs_vector(game, &(&y + &k3 * dt), t + dt)?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        t = initial.time + n as f64 * dt;
        if !(y.norm() <= BLOWUP_NORM) {
            return Err(Error::Dynamics(format!("trajectory blew up (‖state‖ = {:e}) at t = {t}", y.norm())));
        }
        if n % record_every == 0 || n == steps {
            out.push(DynState::from_vector(&y, game.dim(), t));
        }
    }
    Ok(out)
}

/// Simultaneous gradient descent–ascent, `(φ, ω) ← (φ, ω) + lr·(φ̇, ω̇)`;
/// step `n` is stamped with time `n·lr` so rates compare with the flow's.
pub fn gradient_descent_ascent(
    game: &TractableGame,
    initial: &DynState,
    learning_rate: f64,
    steps: usize,
    record_every: usize,
) -> Result<Vec<DynState>> {
    game.check_state(initial)?;
    if !(learning_rate > 0.0) || record_every == 0 {
        return Err(Error::InvalidInput("need learning_rate > 0 and record_every ≥ 1".into()));
    }
    let mut y = initial.to_vector();
    let mut out = vec![initial.clone()];
    for n in 1..=steps {
        let t = initial.time + n as f64 * learning_rate;
        y += rhs_vector(game, &y, t)? * learning_rate;
        if !(y.norm() <= BLOWUP_NORM) {
            return Err(Error::Dynamics(format!("iterates blew up (‖state‖ = {:e}) at step {n}", y.norm())));
        }
        if n % record_every == 0 || n == steps {
            out.push(DynState::from_vector(&y, game.dim(), t));
        }
    }
    Ok(out)
}

/// `(‖φ − φ*‖, ‖ω − ω*‖)` for each state.
pub fn distances(game: &TractableGame, trajectory: &[DynState]) -> Vec<(f64, f64, f64)> {
    let eq = game.equilibrium();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    trajectory
        .iter()
        .map(|s| (s.time, dist(&s.phi, &eq.phi), dist(&s.omega, &eq.omega)))
        .collect()
}

/// Least-squares slope of `−log ‖state − equilibrium‖` against time over the
/// trailing [`FIT_TAIL`] of the trajectory.
pub fn fit_decay_rate(game: &TractableGame, trajectory: &[DynState]) -> Result<f64> {
    let d = distances(game, trajectory);
    let end = d.last().map(|r| r.0).unwrap_or(0.0);
    let start = d.first().map(|r| r.0).unwrap_or(0.0);
    let cut = end - FIT_TAIL * (end - start);
    let pts: Vec<(f64, f64)> = d
        .iter()
        .filter(|r| r.0 >= cut)
        .map(|r| (r.0, (r.1 * r.1 + r.2 * r.2).sqrt()))
        .collect();
    if pts.len() < 3 || pts.iter().any(|p| !(p.1 > 0.0)) {
        return Err(Error::Dynamics("too few usable points for a decay fit".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(-cov / var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBounds {
    /// Bound on real parts of real eigenvalues.
    pub real_bound_im0: f64,
    /// Bound on real parts of complex eigenvalues.
    pub real_bound_imneq0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub divergence: String,
    /// Finite-difference blocks, stored row-major.
    pub k_tp: Vec<Vec<f64>>,
    pub k_tt: Vec<Vec<f64>>,
    /// The same blocks from their integral definitions.
    pub k_tp_quadrature: Vec<Vec<f64>>,
    pub k_tt_quadrature: Vec<Vec<f64>>,
    pub jacobian: Vec<Vec<f64>>,
    /// `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub bounds: EigenBounds,
    pub equilibrium_residual: f64,
    /// Max-abs entry of the generator-generator block.
    pub top_left_norm: f64,
    /// Max-abs entry of `top-right + bottom-leftᵀ`.
    pub antisymmetry_residual: f64,
    pub k_tt_mismatch: f64,
    pub k_tp_mismatch: f64,
    pub k_tp_rank: usize,
    pub k_tp_full_row_rank: bool,
    /// Smallest gap between an eigenvalue's real part and its bound.
    pub bound_slack: f64,
    pub hurwitz: bool,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Central-difference Jacobian of the flow at `state`.
pub fn flow_jacobian(game: &TractableGame, state: &DynState, h: f64) -> Result<DMatrix<f64>> {
    let y = state.to_vector();
    let n = y.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut a = y.clone();
        a[j] += h;
        let mut b = y.clone();
        b[j] -= h;
        let col = (rhs_vector(game, &a, state.time)? - rhs_vector(game, &b, state.time)?) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Integral forms of the off-diagonal (`d × (d+1)`) and critic-curvature
/// blocks at equilibrium.
pub fn quadrature_blocks(game: &TractableGame) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = game.dim();
    let eq = game.equilibrium();
    let var = game.target.variance().to_vec();
    let mut ktp = DMatrix::zeros(d, d + 1);
    let mut ktt = DMatrix::zeros(d + 1, d + 1);
    game.expect(game.target.mean(), |x, w| {
        let v = game.critic_raw(&eq.omega, x);
        let t = game.spec.g_f(v);
        let slope = game.spec.g_f_prime(v) * game.gain;
        let grad_t: Vec<f64> = std::iter::once(slope).chain(x.iter().map(|xi| slope * xi)).collect();
        let curv = game.spec.f_star_double_prime(t)?;
        for a in 0..=d {
            for b in 0..=d {
                ktt[(a, b)] -= w * curv * grad_t[a] * grad_t[b];
            }
            for i in 0..d {
                // ∇_φ log q = (x − φ)/σ²; sign: ∂²J/∂φ∂ω = −E[(f*)′(T) ∇_φ log q ∇_ωTᵀ]
                ktp[(i, a)] -= w * (x[i] - eq.phi[i]) / var[i] * grad_t[a];
            }
        }
        Ok(())
    })?;
    Ok((ktp, ktt))
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > top * 1e-9 * m.nrows().max(m.ncols()) as f64).count()
}

/// Equilibrium Jacobian, its spectrum and the eigenvalue bounds.
pub fn jacobian_at_equilibrium(game: &TractableGame) -> Result<JacobianReport> {
    let eq = game.equilibrium();
    let (p, o) = flow_rhs(game, &eq)?;
    let residual = p.iter().chain(&o).fold(0.0f64, |a, v| a.max(v.abs()));
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::Dynamics(format!("equilibrium residual {residual:e} exceeds {EQUILIBRIUM_TOL:e}")));
    }
    let d = game.dim();
    let m = d + 1;
    let jac = flow_jacobian(game, &eq, FD_STEP)?;
    let top_left = jac.view((0, 0), (d, d)).into_owned();
    let top_right = jac.view((0, d), (d, m)).into_owned();
    let bottom_left = jac.view((d, 0), (m, d)).into_owned();
    let k_tt = jac.view((d, d), (m, m)).into_owned();
    let k_tp = -&top_right;
    let antisymmetry = max_abs(&(&top_right + bottom_left.transpose()));
    let (k_tp_q, k_tt_q) = quadrature_blocks(game)?;

    let neg_ktt = -(&k_tt + k_tt.transpose()) * 0.5;
    let ev_ktt = neg_ktt.symmetric_eigenvalues();
    let lm_tt = ev_ktt.min();
    let lmax_tt = ev_ktt.max();
    let gram = &k_tp * k_tp.transpose();
    let lm_tp = gram.symmetric_eigenvalues().min();
    let bounds = EigenBounds {
        real_bound_im0: -lm_tt * lm_tp / (lm_tt * lmax_tt + lm_tp),
        real_bound_imneq0: -lm_tt / 2.0,
    };
    let eig = jac.complex_eigenvalues();
    let scale = eig.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    let mut slack = f64::INFINITY;
    let mut eigenvalues = Vec::with_capacity(eig.len());
    for z in eig.iter() {
        let bound = if z.im.abs() <= 1e-9 * scale {
            bounds.real_bound_im0
        } else {
            bounds.real_bound_imneq0
        };
        slack = slack.min(bound - z.re);
        eigenvalues.push((z.re, z.im));
    }
    eigenvalues.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let rank = numeric_rank(&k_tp);
    Ok(JacobianReport {
        divergence: game.spec.name.as_str().to_string(),
        k_tp: rows(&k_tp),
        k_tt: rows(&k_tt),
        k_tp_quadrature: rows(&k_tp_q),
        k_tt_quadrature: rows(&k_tt_q),
        jacobian: rows(&jac),
        hurwitz: eigenvalues.iter().all(|z| z.0 < 0.0),
        eigenvalues,
        bounds,
        equilibrium_residual: residual,
        top_left_norm: max_abs(&top_left),
        antisymmetry_residual: antisymmetry,
        k_tt_mismatch: max_abs(&(&k_tt - &k_tt_q)),
        k_tp_mismatch: max_abs(&(&k_tp - &k_tp_q)),
        k_tp_rank: rank,
        k_tp_full_row_rank: rank == d,
        bound_slack: slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub target_mean: f64,
    pub target_sd: f64,
    /// Initial offset of the generator mean from the target mean.
    pub perturbation: f64,
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    /// Step size of the discrete descent–ascent comparison run.
    pub learning_rate: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            target_mean: 0.5,
            target_sd: 1.0,
            perturbation: 0.1,
            horizon: 30.0,
            dt: 1e-3,
            record_every: 100,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub divergence: String,
    /// Fitted rate of the continuous flow.
    pub decay_rate: f64,
    /// Fitted rate of discrete descent–ascent, per unit of `steps × lr`.
    pub discrete_decay_rate: f64,
    pub speed_index: f64,
}

/// Trajectory of one perturbed game in a ranking run.
pub fn perturbed_trajectory(kind: DivergenceKind, config: &RankingConfig) -> Result<(TractableGame, Vec<DynState>)> {
    let game = TractableGame::scalar(config.target_mean, config.target_sd, kind)?;
    let mut init = game.equilibrium();
    init.phi[0] += config.perturbation;
    let traj = integrate(&game, &init, config.horizon, config.dt, config.record_every)?;
    Ok((game, traj))
}

/// Fitted local decay rate and `1/f″(1)` per divergence; runs in parallel.
pub fn speed_ranking_experiment(kinds: &[DivergenceKind], config: &RankingConfig) -> Result<Vec<RankingRow>> {
    let results: Vec<Result<RankingRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&kind| {
                scope.spawn(move || -> Result<RankingRow> {
                    let (game, traj) = perturbed_trajectory(kind, config)?;
                    let d = distances(&game, &traj);
                    let first = d[0].1.hypot(d[0].2);
                    let last = d[d.len() - 1].1.hypot(d[d.len() - 1].2);
                    let rate = fit_decay_rate(&game, &traj)?;
                    if !(last < first) || !(rate > 0.0) {
                        return Err(Error::Dynamics(format!(
                            "{kind}: trajectory did not converge (distance {first:e} → {last:e}, rate {rate:e})"
                        )));
                    }
                    let lr = config.learning_rate;
                    let steps = (config.horizon / lr).round() as usize;
                    let every = ((config.dt * config.record_every as f64) / lr).round().max(1.0) as usize;
                    let iterates = gradient_descent_ascent(&game, &traj[0], lr, steps, every)?;
                    Ok(RankingRow {
                        divergence: kind.as_str().to_string(),
                        decay_rate: rate,
                        discrete_decay_rate: fit_decay_rate(&game, &iterates)?,
                        speed_index: convergence_speed_index(game.spec())?,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ranking worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// Checks that every row with a strictly larger speed index decays at least
/// `1 + separation` times faster.
pub fn check_ranking(rows: &[RankingRow], separation: f64) -> Result<()> {
    for a in rows {
        for b in rows {
            if a.speed_index > b.speed_index && a.decay_rate < (1.0 + separation) * b.decay_rate {
                return Err(Error::Dynamics(format!(
                    "{} (index {}, rate {:.4}) is not {:.0}% faster than {} (index {}, rate {:.4})",
                    a.divergence,
                    a.speed_index,
                    a.decay_rate,
                    separation * 100.0,
                    b.divergence,
                    b.speed_index,
                    b.decay_rate
                )));
            }
        }
    }
    Ok(())
}
