//! Statistical calibration checks for the sampler at desk scale. These are
//! Monte Carlo tests with deliberately generous tolerances; the exact
//! tolerance arithmetic lives next to each assertion.

use absorb::impact::{hellinger, kde};
use absorb::math::{mean, std_dev};
use absorb::model::PriorSpec;
use absorb::sampler::{run_mcmc, ModelKind, SamplerConfig};
use absorb::sim::{generate_dataset, run_experiment, Design, SimModel, SimTruth};
use rayon::prelude::*;

fn no_missing_truth(n_studies: usize) -> SimTruth {
    SimTruth {
        mu1: 0.3,
        mu2: -0.3,
        tau1: 0.5,
        tau2: 0.5,
        // Intercept far above zero: every latent is positive, nothing is
        // ever unreported.
        gamma01: 50.0,
        gamma11: 0.6,
        gamma02: 50.0,
        gamma12: 0.6,
        rho1: 0.0,
        rho2: 0.0,
        rho_w: 0.5,
        rho_b: 0.5,
        n_studies,
        se_range: (0.2, 0.8),
        size_range: (20, 100),
        target_missing_1: 0.0,
        target_missing_2: 0.0,
    }
}

#[test]
fn nbc_posterior_covers_truth_without_missingness() {
    // 100 replicates of a fully reported dataset: the posterior mean of
    // each pooled effect should fall within three posterior standard
    // deviations of the truth in at least 95 of them.
    let truth = no_missing_truth(50);
    let cfg = SamplerConfig {
        n_chains: 2,
        n_iter: 2_000,
        burn_in: 500,
        seed: 0,
        ess_floor: 50.0,
        max_iter_doublings: 1,
        ..Default::default()
    };
    let hits: usize = (0..100u64)
        .into_par_iter()
        .map(|r| {
            let sim = generate_dataset(&truth, 1000 + r).unwrap();
            let prior = PriorSpec::for_dataset(&sim.observed);
            let mut cfg_r = cfg.clone();
            cfg_r.seed = r;
            let (draws, _) = run_mcmc(ModelKind::Nbc, &sim.observed, &prior, &cfg_r).unwrap();
            let ok = |name: &str, target: f64| {
                let series = draws.combined(name);
                (mean(&series) - target).abs() < 3.0 * std_dev(&series)
            };
            (ok("mu1", truth.mu1) && ok("mu2", truth.mu2)) as usize
        })
        .sum();
    assert!(hits >= 95, "only {hits}/100 replicates within 3 posterior SDs");
}

#[test]
fn nbc_is_unbiased_without_selection() {
    // rho1 = rho2 = 0 makes missingness independent of the effects, so the
    // non-bias-corrected model is correctly specified; its bias must be
    // within Monte Carlo error (3 SE / sqrt(reps)).
    let truth = SimTruth {
        rho1: 0.0,
        rho2: 0.0,
        ..SimTruth::experiment(1, 50).unwrap()
    };
    let cfg = SamplerConfig {
        n_chains: 2,
        n_iter: 2_000,
        burn_in: 500,
        seed: 77,
        ess_floor: 50.0,
        max_iter_doublings: 1,
        ..Default::default()
    };
    let reps = 40;
    let table = run_experiment(
        &Design::Custom(truth),
        50,
        reps,
        &[SimModel::Nbc],
        &cfg,
        4242,
    )
    .unwrap();
    for endpoint in [1u8, 2] {
        let row = table.row("nbc", endpoint).unwrap();
        let tol = 3.0 * row.se / (reps as f64).sqrt();
        assert!(
            row.bias.abs() < tol,
            "endpoint {endpoint}: bias {} exceeds {tol}",
            row.bias
        );
    }
}

#[test]
fn absorb_and_nbc_agree_on_fully_reported_data() {
    // With nothing unreported, the bias-corrected posterior stays close to
    // the plain model's. It is not identical: the free selection block
    // still admits a selection effect a priori, which widens the
    // posterior a little. Distances from real ORB sit far above this.
    let truth = no_missing_truth(40);
    let sim = generate_dataset(&truth, 9).unwrap();
    assert_eq!(sim.observed.m2 + sim.observed.m3, 0);
    let prior = PriorSpec::for_dataset(&sim.observed);
    let cfg = SamplerConfig {
        n_chains: 2,
        n_iter: 6_000,
        burn_in: 1_000,
        seed: 10,
        ess_floor: 100.0,
        max_iter_doublings: 1,
        ..Default::default()
    };
    let (absorb_fit, _) = run_mcmc(ModelKind::Absorb, &sim.observed, &prior, &cfg).unwrap();
    let (nbc_fit, _) = run_mcmc(ModelKind::Nbc, &sim.observed, &prior, &cfg).unwrap();
    let h = hellinger(
        &kde(&absorb_fit.combined("mu1"), 512).unwrap(),
        &kde(&nbc_fit.combined("mu1"), 512).unwrap(),
    )
    .unwrap();
    assert!(h < 0.25, "Hellinger {h}");
}
