//! Closed-form f-divergences between diagonal Gaussians, and a quadrature
//! oracle that evaluates `∫ q f(p/q)` directly in one dimension.

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{check_len, Error, Result};
use crate::quadrature::adaptive_simpson;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Oracle tolerance (absolute).
pub const QUADRATURE_TOL: f64 = 1e-9;
/// Integration half-width in units of the widest standard deviation.
pub const WINDOW_SIGMAS: f64 = 10.0;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        check_len(mean.len(), variance.len())?;
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("variance must be positive, got {v}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("mean must be finite".into()));
        }
        Ok(DiagonalGaussian { mean, variance })
    }

    /// One-dimensional `N(mean, variance)`.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], vec![variance])
    }

    /// Isotropic `N(mean, variance · I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (xi - m).powi(2) / v - 0.5 * v.ln() - LN_SQRT_2PI)
            .sum()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Per-coordinate marginals as scalar Gaussians.
    pub fn marginals(&self) -> impl Iterator<Item = DiagonalGaussian> + '_ {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(&m, &v)| DiagonalGaussian {
                mean: vec![m],
                variance: vec![v],
            })
    }
}

fn paired<'a>(
    p: &'a DiagonalGaussian,
    q: &'a DiagonalGaussian,
) -> Result<impl Iterator<Item = (f64, f64, f64, f64)> + 'a> {
    check_len(p.dim(), q.dim())?;
    Ok(p.mean
        .iter()
        .zip(&p.variance)
        .zip(q.mean.iter().zip(&q.variance))
        .map(|((&mp, &vp), (&mq, &vq))| (mp, vp, mq, vq)))
}

/// `KL(P ‖ Q)`.
pub fn kl(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    Ok(paired(p, q)?
        .map(|(mp, vp, mq, vq)| 0.5 * ((vq / vp).ln() - 1.0 + vp / vq + (mp - mq).powi(2) / vq))
        .sum())
}

/// Jeffreys divergence `KL(P‖Q) + KL(Q‖P)`.
pub fn jeffreys(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    Ok(paired(p, q)?
        .map(|(mp, vp, mq, vq)| {
            let d2 = (mp - mq).powi(2);
            -1.0 + 0.5 * (vp / vq + vq / vp + d2 * (1.0 / vq + 1.0 / vp))
        })
        .sum())
}

/// Log of the Bhattacharyya coefficient `∫ √(pq)`.
pub fn log_bhattacharyya(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    Ok(paired(p, q)?
        .map(|(mp, vp, mq, vq)| {
            let avg = 0.5 * (vp + vq);
            0.25 * (vp.ln() + vq.ln()) - 0.5 * avg.ln() - (mp - mq).powi(2) / (4.0 * (vp + vq))
        })
        .sum())
}

/// Squared Hellinger distance `1 − BC(P, Q)`, in `[0, 1]`.
pub fn hellinger2(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    let lbc = log_bhattacharyya(p, q)?;
    Ok((-lbc.min(0.0).exp_m1()).clamp(0.0, 1.0))
}

/// Pearson `χ²(P ‖ Q) = ∫ p²/q − 1`. Requires `2 var_Q > var_P` in every
/// coordinate; the integral diverges otherwise.
pub fn chi2(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    let mut log_factor = 0.0;
    for (i, (mp, vp, mq, vq)) in paired(p, q)?.enumerate() {
        let denom = 2.0 * vq - vp;
        if !(denom > 0.0) {
            return Err(Error::DivergenceUndefined(format!(
                "chi2 needs 2*var_Q > var_P, coordinate {i} has var_Q = {vq}, var_P = {vp}"
            )));
        }
        // ln of  var_Q / (σ_P √(2var_Q − var_P)) · exp((μ_P−μ_Q)²/(2var_Q − var_P))
        log_factor += vq.ln() - 0.5 * vp.ln() - 0.5 * denom.ln() + (mp - mq).powi(2) / denom;
    }
    Ok(log_factor.exp_m1().max(0.0))
}

/// `√(Σ (μ_Q,i − μ_P,i)² / σᵢ²)` under a shared diagonal covariance.
pub fn mahalanobis(
    p: &DiagonalGaussian,
    q: &DiagonalGaussian,
    shared_variance: &[f64],
) -> Result<f64> {
    check_len(p.dim(), q.dim())?;
    check_len(p.dim(), shared_variance.len())?;
    if shared_variance.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("shared variance must be positive".into()));
    }
    Ok(p.mean
        .iter()
        .zip(&q.mean)
        .zip(shared_variance)
        .map(|((a, b), v)| (b - a).powi(2) / v)
        .sum::<f64>()
        .sqrt())
}

/// Closed-form value for the divergences that have one.
pub fn closed_form(
    spec: &DivergenceSpec,
    p: &DiagonalGaussian,
    q: &DiagonalGaussian,
) -> Result<f64> {
    use crate::divergence::DivergenceKind::*;
    match spec.name {
        Kl => kl(p, q),
        ReverseKl => kl(q, p),
        SquaredHellinger => hellinger2(p, q),
        PearsonChi2 => chi2(p, q),
        Jeffreys => jeffreys(p, q),
        JensenShannon | Gan | TotalVariation => Err(Error::Unsupported {
            operation: "closed-form Gaussian divergence",
            divergence: spec.name.as_str(),
        }),
    }
}

/// `∫ q(x) f(p(x)/q(x)) dx` by adaptive Simpson over
/// `[min μ − 10 max σ, max μ + 10 max σ]`, widened to cover ten standard
/// deviations of the tilted density `p²/q` when it is normalisable; reported
/// in conventional units (see [`DivergenceSpec::value_scale`]).
/// One-dimensional only.
///
/// Gaussian tails beyond ten standard deviations carry mass below 1e-22.
pub fn quadrature_divergence(
    spec: &DivergenceSpec,
    p: &DiagonalGaussian,
    q: &DiagonalGaussian,
) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::InvalidInput(
            "quadrature oracle is one-dimensional".into(),
        ));
    }
    let (mp, mq) = (p.mean[0], q.mean[0]);
    let max_sd = p.variance[0].max(q.variance[0]).sqrt();
    let mut lo = mp.min(mq) - WINDOW_SIGMAS * max_sd;
    let mut hi = mp.max(mq) + WINDOW_SIGMAS * max_sd;
    let (vp, vq) = (p.variance[0], q.variance[0]);
    if 2.0 * vq > vp {
        let denom = 2.0 * vq - vp;
        let centre = (2.0 * mp * vq - mq * vp) / denom;
        let sd = (vp * vq / denom).sqrt();
        lo = lo.min(centre - WINDOW_SIGMAS * sd);
        hi = hi.max(centre + WINDOW_SIGMAS * sd);
    }
    let integrand = |x: f64| {
        let lp = p.log_density(&[x]);
        let lq = q.log_density(&[x]);
        let qx = lq.exp();
        if qx == 0.0 {
            return if lp.exp() == 0.0 { 0.0 } else { f64::NAN };
        }
        qx * spec.f((lp - lq).exp())
    };
    let raw = adaptive_simpson(integrand, lo, hi, QUADRATURE_TOL / spec.value_scale)?;
    Ok(raw * spec.value_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceKind;
    use proptest::prelude::*;

    fn n(m: f64, v: f64) -> DiagonalGaussian {
        DiagonalGaussian::scalar(m, v).unwrap()
    }

    #[test]
    fn construction_is_validated() {
        assert!(DiagonalGaussian::new(vec![], vec![]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(matches!(
            DiagonalGaussian::new(vec![0.0, 1.0], vec![1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&n(0.0, 1.0), &n(0.0, 1.0)).unwrap(), 0.0);
        assert!((kl(&n(1.0, 1.0), &n(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let expect = 0.5 * ((0.5f64).ln() - 1.0 + 2.0);
        assert!((kl(&n(0.0, 2.0), &n(0.0, 1.0)).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.153_426).abs() < 1e-6);
        let a = DiagonalGaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(kl(&a, &n(0.0, 1.0)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn jeffreys_examples() {
        assert_eq!(jeffreys(&n(0.3, 2.0), &n(0.3, 2.0)).unwrap(), 0.0);
        assert!((jeffreys(&n(1.0, 1.0), &n(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger2(&n(0.0, 1.0), &n(0.0, 1.0)).unwrap(), 0.0);
        let h = hellinger2(&n(2.0, 1.0), &n(0.0, 1.0)).unwrap();
        assert!((h - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        let mut last = 0.0;
        for k in 1..60 {
            let h = hellinger2(&n(k as f64, 1.0), &n(0.0, 1.0)).unwrap();
            assert!(h >= last && h <= 1.0);
            last = h;
        }
        assert!(last > 1.0 - 1e-12);
    }

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2(&n(0.0, 1.0), &n(0.0, 1.0)).unwrap(), 0.0);
        let c = chi2(&n(1.0, 1.0), &n(0.0, 1.0)).unwrap();
        assert!((c - (std::f64::consts::E - 1.0)).abs() < 1e-14);
        assert!(matches!(
            chi2(&n(0.0, 4.0), &n(0.0, 1.0)),
            Err(Error::DivergenceUndefined(_))
        ));
    }

    #[test]
    fn mahalanobis_examples() {
        let a = DiagonalGaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let b = DiagonalGaussian::isotropic(vec![3.0, 4.0], 1.0).unwrap();
        assert_eq!(mahalanobis(&a, &a, &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mahalanobis(&a, &b, &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(mahalanobis(&n(0.0, 4.0), &n(2.0, 4.0), &[4.0]).unwrap(), 1.0);
        assert!(mahalanobis(&a, &b, &[1.0]).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let kl_spec = DivergenceKind::Kl.spec();
        let h_spec = DivergenceKind::SquaredHellinger.spec();
        assert!(quadrature_divergence(&kl_spec, &n(0.0, 1.0), &n(0.0, 1.0)).unwrap().abs() < 1e-9);
        let v = quadrature_divergence(&kl_spec, &n(1.0, 1.0), &n(0.0, 1.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-6);
        let v = quadrature_divergence(&h_spec, &n(2.0, 1.0), &n(0.0, 1.0)).unwrap();
        assert!((v - 0.393_469).abs() < 1e-6);
        let two_d = DiagonalGaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!(quadrature_divergence(&kl_spec, &two_d, &two_d).is_err());
    }

    #[test]
    fn total_variation_by_quadrature() {
        // TV(N(μ,1), N(0,1)) = 2Φ(μ/2) − 1; for μ = 2 that is erf(1/√2)
        let tv = DivergenceKind::TotalVariation.spec();
        let v = quadrature_divergence(&tv, &n(2.0, 1.0), &n(0.0, 1.0)).unwrap();
        assert!((v - 0.682_689_492_137_086).abs() < 1e-8);
    }

    #[test]
    fn diagonal_factorization() {
        let p = DiagonalGaussian::new(vec![0.3, -1.0, 2.0], vec![0.5, 1.5, 2.0]).unwrap();
        let q = DiagonalGaussian::new(vec![-0.2, 0.4, 1.0], vec![1.0, 0.8, 1.7]).unwrap();
        let per: f64 = p.marginals().zip(q.marginals()).map(|(a, b)| kl(&a, &b).unwrap()).sum();
        assert!((per - kl(&p, &q).unwrap()).abs() < 1e-12);
        let per: f64 = p
            .marginals()
            .zip(q.marginals())
            .map(|(a, b)| jeffreys(&a, &b).unwrap())
            .sum();
        assert!((per - jeffreys(&p, &q).unwrap()).abs() < 1e-12);
        // product structure of BC and of 1 + chi2
        let bc: f64 = p
            .marginals()
            .zip(q.marginals())
            .map(|(a, b)| 1.0 - hellinger2(&a, &b).unwrap())
            .product();
        assert!((1.0 - bc - hellinger2(&p, &q).unwrap()).abs() < 1e-12);
        let c: f64 = p
            .marginals()
            .zip(q.marginals())
            .map(|(a, b)| 1.0 + chi2(&a, &b).unwrap())
            .product();
        let direct = chi2(&p, &q).unwrap();
        assert!((c - 1.0 - direct).abs() < 1e-12 * c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn jeffreys_is_symmetrised_kl(
            mp in -3.0f64..3.0, mq in -3.0f64..3.0, vp in 0.2f64..4.0, vq in 0.2f64..4.0
        ) {
            let (p, q) = (n(mp, vp), n(mq, vq));
            let j = jeffreys(&p, &q).unwrap();
            let s = kl(&p, &q).unwrap() + kl(&q, &p).unwrap();
            prop_assert!((j - s).abs() <= 1e-12 * s.max(1.0));
            prop_assert!((j - jeffreys(&q, &p).unwrap()).abs() <= 1e-12 * j.max(1.0));
        }

        #[test]
        fn divergences_are_nonnegative_and_h2_below_one(
            mp in -3.0f64..3.0, mq in -3.0f64..3.0, vp in 0.2f64..4.0, vq in 0.2f64..4.0
        ) {
            let (p, q) = (n(mp, vp), n(mq, vq));
            prop_assert!(kl(&p, &q).unwrap() >= 0.0);
            prop_assert!(jeffreys(&p, &q).unwrap() >= 0.0);
            let h = hellinger2(&p, &q).unwrap();
            prop_assert!((0.0..1.0).contains(&h));
            match chi2(&p, &q) {
                Ok(c) => {
                    prop_assert!(2.0 * vq > vp);
                    // overflow only when 2 var_Q - var_P is tiny
                    prop_assert!(c >= 0.0 && (c.is_finite() || 2.0 * vq - vp < 0.05));
                }
                Err(Error::DivergenceUndefined(_)) => prop_assert!(2.0 * vq <= vp),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn monotone_in_mahalanobis_distance(v in 0.3f64..3.0, dir in -1.0f64..1.0) {
            let q = n(0.0, v);
            let mut last = [0.0f64; 4];
            for k in 0..30 {
                let p = n(dir.signum() * 0.2 * k as f64, v);
                let now = [
                    kl(&p, &q).unwrap(),
                    jeffreys(&p, &q).unwrap(),
                    hellinger2(&p, &q).unwrap(),
                    chi2(&p, &q).unwrap(),
                ];
                for i in 0..4 {
                    prop_assert!(now[i] >= last[i]);
                }
                last = now;
            }
        }
    }
}
