use fdmu::divergence::DivergenceKind;
use fdmu::gaussian::{self, DiagonalGaussian};
use fdmu::variational::{fit_estimate, optimal_critic_residual, scalar_batch, variational_objective, Discriminator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn draws(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn kl_and_hellinger_estimates_near_closed_form() {
    for (kind, mp, expect) in [
        (DivergenceKind::Kl, 1.0, 0.5),
        (DivergenceKind::SquaredHellinger, 2.0, 1.0 - (-0.5f64).exp()),
    ] {
        let spec = kind.spec();
        let p = scalar_batch(&draws(mp, 1.0, 4096, 1));
        let q = scalar_batch(&draws(0.0, 1.0, 4096, 2));
        let (est, disc) = fit_estimate(&spec, &p, &q, 2000, 3).unwrap();
        eprintln!("{kind}: {}", est.value);
        assert!((est.value - expect).abs() <= 0.1 * expect, "{kind}: {}", est.value);
        assert_eq!(est.value, *est.lower_bound_trace.last().unwrap());
        if kind == DivergenceKind::Kl {
            let grid: Vec<f64> = (-60..=60).map(|i| i as f64 * 0.1).collect();
            let r = optimal_critic_residual(
                &spec,
                &disc,
                &DiagonalGaussian::scalar(1.0, 1.0).unwrap(),
                &DiagonalGaussian::scalar(0.0, 1.0).unwrap(),
                &grid,
            )
            .unwrap();
            eprintln!("residual {r}");
            assert!(r <= 0.1, "residual {r}");
        }
        let (again, _) = fit_estimate(&spec, &p, &q, 2000, 3).unwrap();
        assert_eq!(est, again);
    }
}

#[test]
fn identical_distributions_estimate_near_zero() {
    let x = draws(0.0, 1.0, 4096, 5);
    let y = draws(0.0, 1.0, 4096, 6);
    for kind in DivergenceKind::ALL {
        let spec = kind.spec();
        let (est, _) = fit_estimate(&spec, &scalar_batch(&x), &scalar_batch(&y), 2000, 9).unwrap();
        eprintln!("{kind}: {}", est.value);
        assert!(est.value <= 0.05, "{kind}: {}", est.value);
    }
}

#[test]
fn random_critics_stay_below_the_divergence() {
    let p = scalar_batch(&draws(1.0, 1.0, 4096, 11));
    let q = scalar_batch(&draws(0.0, 1.0, 4096, 12));
    let pg = DiagonalGaussian::scalar(1.0, 1.0).unwrap();
    let qg = DiagonalGaussian::scalar(0.0, 1.0).unwrap();
    for kind in [
        DivergenceKind::Kl,
        DivergenceKind::ReverseKl,
        DivergenceKind::SquaredHellinger,
        DivergenceKind::PearsonChi2,
        DivergenceKind::Jeffreys,
    ] {
        let spec = kind.spec();
        let truth = gaussian::closed_form(&spec, &pg, &qg).unwrap();
        for seed in 0..5 {
            let disc = Discriminator::new(1, seed).unwrap();
            let v = variational_objective(&spec, &disc, &p, &q).unwrap();
            assert!(v <= truth + 0.05, "{kind} seed {seed}: {v} > {truth}");
        }
    }
}

#[test]
fn smoothed_trace_is_nondecreasing_in_second_half() {
    let spec = DivergenceKind::Kl.spec();
    let p = scalar_batch(&draws(1.0, 1.0, 4096, 21));
    let q = scalar_batch(&draws(0.0, 1.0, 4096, 22));
    let (est, _) = fit_estimate(&spec, &p, &q, 2000, 23).unwrap();
    let tail = &est.lower_bound_trace[1000..];
    let mut best = f64::NEG_INFINITY;
    for &v in tail {
        assert!(v >= best - 0.02, "trace dropped from {best} to {v}");
        best = best.max(v);
    }
}
