mod common;

use fdmu::divergence::DivergenceKind;
use fdmu::eval::evaluate;
use fdmu::unlearn::{unlearn, Mode, UnlearnConfig};
use fdmu::Error;

fn config(overrides: &[&str]) -> UnlearnConfig {
    UnlearnConfig::default()
        .with_overrides(&[&["steps=30", "batch_size=64", "trajectory_pool=256"][..], overrides].concat())
        .unwrap()
}

#[test]
fn closed_form_run_is_deterministic_and_leaves_the_base_untouched() {
    let f = common::fixture();
    let before = f.net.checksum();
    let cfg = config(&["eval_every=10", "eval_samples=50"]);
    let a = unlearn(&f.net, &f.concepts, &f.schedule, &cfg).unwrap();
    let b = unlearn(&f.net, &f.concepts, &f.schedule, &cfg).unwrap();
    assert_eq!(f.net.checksum(), before);
    assert_ne!(a.net.checksum(), before);
    assert_eq!(a.net.checksum(), b.net.checksum());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.len(), 30);
    assert_eq!(a.grad_log.len(), 30);
    assert!(a.discriminator.is_none());
    let evals: Vec<usize> = a.metrics.iter().filter(|m| m.accuracy.is_some()).map(|m| m.step).collect();
    assert_eq!(evals, vec![9, 19, 29]);
    for r in &a.grad_log {
        assert!(r.grad_norm_h2 <= r.grad_norm_kl && r.grad_norm_kl <= r.grad_norm_chi2);
    }
}

#[test]
fn hellinger_erases_the_target() {
    let f = common::fixture();
    let cfg = UnlearnConfig::default().with_overrides(&["steps=200"]).unwrap();
    let out = unlearn(&f.net, &f.concepts, &f.schedule, &cfg).unwrap();
    let reports = evaluate(&out.net, &f.concepts, &f.schedule, 200, 3).unwrap();
    assert!(reports[0].accuracy <= 0.3, "{reports:?}");
    assert!(reports[2].accuracy >= 0.7 && reports[3].accuracy >= 0.7, "{reports:?}");
    assert!(out.metrics.last().unwrap().mse < out.metrics[0].mse);
}

#[test]
fn regularisers_and_alternate_sources_run() {
    let f = common::fixture();
    for extra in [
        &["prior_preservation=true", "gradient_surgery=true"][..],
        &["importance_sampling=true", "importance_cutoff=0.3"],
        &["trajectory_source=\"target\"", "anchor=\"null\""],
        &["divergence=\"jeffreys\"", "sigma=2.0"],
        &["divergence=\"chi2\"", "sigma=3.0"],
    ] {
        let cfg = config(extra);
        let out = unlearn(&f.net, &f.concepts, &f.schedule, &cfg).unwrap_or_else(|e| panic!("{extra:?}: {e}"));
        assert!(out.metrics.iter().all(|m| m.loss.is_finite() && m.grad_norm.is_finite()));
        if cfg.prior_preservation {
            assert!(out.metrics.iter().any(|m| m.preservation_loss > 0.0));
        }
    }
}

#[test]
fn chi_squared_guard_stops_blowups() {
    let f = common::fixture();
    let cfg = config(&["divergence=\"chi2\"", "sigma=0.05"]);
    assert!(matches!(
        unlearn(&f.net, &f.concepts, &f.schedule, &cfg),
        Err(Error::Explosion { .. })
    ));
}

#[test]
fn variational_mode_trains_a_critic() {
    let f = common::fixture();
    for kind in ["js", "kl", "hellinger2", "gan"] {
        let cfg = config(&["mode=\"variational\"", &format!("divergence=\"{kind}\""), "steps=10"]);
        assert_eq!(cfg.mode, Mode::Variational);
        let a = unlearn(&f.net, &f.concepts, &f.schedule, &cfg).unwrap_or_else(|e| panic!("{kind}: {e}"));
        let b = unlearn(&f.net, &f.concepts, &f.schedule, &cfg).unwrap();
        assert!(a.discriminator.is_some());
        assert_eq!(a.net.checksum(), b.net.checksum());
        assert_eq!(a.metrics.len(), 10);
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let f = common::fixture();
    for bad in [
        &["target=\"Z\""][..],
        &["anchor=\"A\""],
        &["divergence=\"js\""],
        &["sigma=0"],
        &["importance_cutoff=0"],
        &["preservation_concepts=[\"A\"]"],
    ] {
        let cfg = config(bad);
        assert!(unlearn(&f.net, &f.concepts, &f.schedule, &cfg).is_err(), "{bad:?}");
    }
    assert!(UnlearnConfig::default().with_overrides(&["no_such_key=1"]).is_err());
    assert!(UnlearnConfig::default().with_overrides(&["steps"]).is_err());
    assert!(UnlearnConfig::from_toml("steps = \"x\"").is_err());
    let cfg = config(&["divergence=\"jeffreys\""]);
    assert_eq!(cfg.divergence, DivergenceKind::Jeffreys);
    assert_eq!(UnlearnConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}
