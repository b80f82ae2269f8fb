//! Bayesian correction and quantification of outcome reporting bias in
//! bivariate meta-analysis.
//!
//! A bivariate meta-analysis pools two correlated treatment effects across
//! studies, but studies often report only one of the two outcomes, and
//! which outcome goes unreported tends to depend on the results. This crate
//! fits a selection model that couples each reported effect to a latent
//! reporting variable, corrects the pooled-effect estimates for that
//! selection, and quantifies how much the correction moved the answer: the
//! D measure, a Hellinger distance in [0, 1] between the bias-corrected and
//! uncorrected posterior densities.
//!
//! The pieces, in dependency order:
//!
//! * [`data`] - study records, CSV ingestion, validation, and the canonical
//!   partition into both / first-only / second-only reporters.
//! * [`model`] - parameters, priors, missing-standard-error imputation, and
//!   the log-likelihoods of the selection model, its non-bias-corrected
//!   reduction, and the extension covering completely missing studies.
//! * [`sampler`] - a native Metropolis-within-Gibbs engine with latent-
//!   variable augmentation, plus effective-sample-size and split potential
//!   scale reduction diagnostics.
//! * [`impact`] - kernel density estimates, the Hellinger distance, the D
//!   measure with interpretation bands and reference percentiles, credible
//!   intervals, and Jaccard indices.
//! * [`sim`] - the synthetic data generator implementing the selection
//!   mechanism and the replication harness producing bias / SE / coverage
//!   tables.
//!
//! The `absorb` command-line tool packages these into reproducible batch
//! runs; see the guide in `book/` for a walk-through.

pub mod data;
pub mod impact;
pub mod math;
pub mod model;
pub mod sampler;
pub mod sim;

pub use data::{parse_dataset, partition, validate, BivariateDataset, ParseOptions, StudyRecord};
pub use impact::{
    credible_interval, d_measure, hellinger, interpret_d, jaccard_index, kde, kde2, DReport,
    DensityGrid, ImpactBand,
};
pub use model::{
    estimate_khat, impute_missing_se, loglik_absorb, loglik_ism, loglik_nbc, AbsorbParams,
    ImputationReport, LatentState, NbcParams, PriorSpec,
};
pub use sampler::{
    effective_sample_size, run_mcmc, run_mcmc_with_options, run_prior_calibration,
    sample_truncated_normal, split_rhat, DiagnosticsReport, FitOptions, ModelKind,
    PosteriorDraws, SamplerConfig,
};
pub use sim::{generate_dataset, run_experiment, Design, MetricsTable, SimModel, SimTruth};

// The book's code blocks double as tests: every snippet in the guide is
// compiled and run by `cargo test`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(data, "../../../book/src/data.md");
    chapter!(selection_model, "../../../book/src/selection-model.md");
    chapter!(sampler, "../../../book/src/sampler.md");
    chapter!(orb_impact, "../../../book/src/orb-impact.md");
    chapter!(simulation, "../../../book/src/simulation.md");
    chapter!(cli, "../../../book/src/cli.md");
}
