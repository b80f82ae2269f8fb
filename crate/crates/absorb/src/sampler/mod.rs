//! Native Metropolis-within-Gibbs engine for the three model fits.
//!
//! One sweep updates, in order: the latent selection variables `z` (exact
//! truncated-normal full conditionals), the study-level means (conjugate
//! Gaussians), the pooled effects (conjugate bivariate Gaussian), and then
//! each remaining scalar by random-walk Metropolis on a transformed scale
//! (log for heterogeneities, inverse-tanh for correlations, logit-on-range
//! for the selection parameters and the ISM standard errors). Proposal
//! scales adapt toward a target acceptance rate during burn-in only, so the
//! retained portion of each chain is a time-homogeneous Markov chain.
//!
//! Chains are independent: each derives a private ChaCha stream from
//! `(seed, chain_index)`, which makes every fit bit-reproducible regardless
//! of thread scheduling.

pub mod diagnostics;
pub mod truncnorm;

pub use diagnostics::{effective_sample_size, split_rhat, EssEstimate};
pub use truncnorm::sample_truncated_normal;

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{validate, BivariateDataset};
use crate::math::sample_bivariate_normal;
use crate::model::{
    impute_missing_se, log_latent_mean_prior, loglik_absorb_tab, loglik_ism_tab, loglik_nbc,
    se_table, AbsorbParams, LatentState, ModelError, NbcParams, PriorSpec, SeTable,
};

/// Which posterior is being sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "ABSORB")]
    Absorb,
    #[serde(rename = "NBC")]
    Nbc,
    #[serde(rename = "ABSORB_ISM")]
    AbsorbIsm,
}

const ABSORB_PARAMS: [&str; 12] = [
    "mu1", "mu2", "tau1", "tau2", "gamma01", "gamma11", "gamma02", "gamma12", "rho1", "rho2",
    "rhoW", "rhoB",
];
const NBC_PARAMS: [&str; 6] = ["mu1", "mu2", "tau1", "tau2", "rhoW", "rhoB"];

impl ModelKind {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Nbc => &NBC_PARAMS,
            _ => &ABSORB_PARAMS,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Absorb => "ABSORB",
            ModelKind::Nbc => "NBC",
            ModelKind::AbsorbIsm => "ABSORB_ISM",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "absorb" => Ok(ModelKind::Absorb),
            "nbc" => Ok(ModelKind::Nbc),
            "ism" | "absorb_ism" | "absorb-ism" => Ok(ModelKind::AbsorbIsm),
            other => Err(format!("unknown model `{other}` (absorb|nbc|ism)")),
        }
    }
}

/// MCMC run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iter: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    /// Minimum effective sample size for each pooled effect; falling short
    /// doubles the iteration count, up to `max_iter_doublings` times.
    pub ess_floor: f64,
    pub max_iter_doublings: u32,
    /// Proposal scales adapt once per this many burn-in iterations.
    pub adapt_window: u64,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 3,
            n_iter: 50_000,
            burn_in: 10_000,
            thin: 1,
            seed: 1,
            ess_floor: 100.0,
            max_iter_doublings: 2,
            adapt_window: 50,
            target_accept: 0.44,
        }
    }
}

impl SamplerConfig {
    pub fn retained_per_chain(&self) -> u64 {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |msg: String| Err(SamplerError::InvalidConfig(msg));
        if self.n_chains == 0 {
            return fail("n_chains must be at least 1".into());
        }
        if self.burn_in >= self.n_iter {
            return fail(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            ));
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.retained_per_chain() < 100 {
            return fail(format!(
                "retained draws per chain {} below 100; raise n_iter or lower thin",
                self.retained_per_chain()
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0, 1)".into());
        }
        if self.adapt_window == 0 {
            return fail("adapt_window must be at least 1".into());
        }
        if !(self.ess_floor > 0.0) {
            return fail("ess_floor must be positive".into());
        }
        Ok(())
    }
}

/// Extra switches used by verification runs; `Default` gives a plain fit.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Keep both outcome-selection correlations frozen at zero.
    pub freeze_selection_correlations: bool,
    /// Drop the likelihood and every latent block: the chain then targets
    /// the prior of the structural parameters alone.
    pub prior_only: bool,
}

/// One chain's retained draws (wire order) and realized acceptance rates.
#[derive(Debug, Clone)]
pub struct Chain {
    pub chain_index: usize,
    pub draws: Vec<Vec<f64>>,
    pub accept_rates: BTreeMap<String, f64>,
}

/// Retained posterior draws across all chains of one fit.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub model: ModelKind,
    pub param_names: Vec<&'static str>,
    pub chains: Vec<Chain>,
    pub dataset_fingerprint: String,
    pub config: SamplerConfig,
}

impl PosteriorDraws {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|&p| p == name)
    }

    /// All retained draws of one parameter, chains concatenated in order.
    pub fn combined(&self, name: &str) -> Vec<f64> {
        let idx = self
            .param_index(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |row| row[idx]))
            .collect()
    }

    /// Paired (mu1, mu2) draws, chains concatenated.
    pub fn combined_mu_pairs(&self) -> Vec<(f64, f64)> {
        let i1 = self.param_index("mu1").unwrap();
        let i2 = self.param_index("mu2").unwrap();
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |row| (row[i1], row[i2])))
            .collect()
    }

    /// One chain's series for a parameter.
    pub fn chain_series(&self, chain: usize, name: &str) -> Vec<f64> {
        let idx = self.param_index(name).expect("unknown parameter");
        self.chains[chain].draws.iter().map(|row| row[idx]).collect()
    }

    pub fn n_retained(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn posterior_mean(&self, name: &str) -> f64 {
        crate::math::mean(&self.combined(name))
    }

    /// Draw export: `chain,iter,<parameters>` with one row per retained
    /// draw. `iter` is the absolute iteration index within the chain.
    pub fn write_draws_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "chain,iter")?;
        for name in &self.param_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for chain in &self.chains {
            for (k, row) in chain.draws.iter().enumerate() {
                let iter = self.config.burn_in + 1 + k as u64 * self.config.thin;
                write!(w, "{},{}", chain.chain_index, iter)?;
                for v in row {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Rebuild a draws object from its CSV export plus the run metadata
    /// recorded alongside it.
    pub fn read_draws_csv(
        text: &str,
        model: ModelKind,
        dataset_fingerprint: String,
        config: SamplerConfig,
    ) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty draws file")?;
        let expected: Vec<String> = ["chain", "iter"]
            .into_iter()
            .map(String::from)
            .chain(model.param_names().iter().map(|s| s.to_string()))
            .collect();
        let got: Vec<&str> = header.split(',').collect();
        if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(format!("unexpected draws header `{header}`"));
        }
        let mut chains: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != expected.len() {
                return Err(format!("bad draws row `{line}`"));
            }
            let chain: usize = cells[0].parse().map_err(|_| "bad chain index")?;
            let row: Result<Vec<f64>, _> = cells[2..].iter().map(|c| c.parse()).collect();
            chains
                .entry(chain)
                .or_default()
                .push(row.map_err(|_| format!("non-numeric draw in `{line}`"))?);
        }
        Ok(PosteriorDraws {
            model,
            param_names: model.param_names().to_vec(),
            chains: chains
                .into_iter()
                .map(|(chain_index, draws)| Chain {
                    chain_index,
                    draws,
                    accept_rates: BTreeMap::new(),
                })
                .collect(),
            dataset_fingerprint,
            config,
        })
    }
}

/// Convergence summary of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub ess: BTreeMap<String, f64>,
    pub split_rhat: BTreeMap<String, f64>,
    pub converged: bool,
    pub iterations_used: u64,
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is not fit-eligible: {0}")]
    InvalidData(String),
    #[error("non-finite log posterior at initialization after 100 redraws")]
    InitializationFailed,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fit a model with default options.
pub fn run_mcmc(
    model: ModelKind,
    dataset: &BivariateDataset,
    prior: &PriorSpec,
    config: &SamplerConfig,
) -> Result<(PosteriorDraws, DiagnosticsReport), SamplerError> {
    run_mcmc_with_options(model, dataset, prior, config, FitOptions::default())
}

/// Fit a model with verification switches available.
pub fn run_mcmc_with_options(
    model: ModelKind,
    dataset: &BivariateDataset,
    prior: &PriorSpec,
    config: &SamplerConfig,
    opts: FitOptions,
) -> Result<(PosteriorDraws, DiagnosticsReport), SamplerError> {
    config.validate()?;
    if !opts.prior_only {
        let report = validate(dataset);
        if !report.is_fit_eligible() {
            let msgs: Vec<String> = report
                .errors
                .iter()
                .map(|(id, m)| format!("{id}: {m}"))
                .collect();
            return Err(SamplerError::InvalidData(msgs.join("; ")));
        }
    }
    let engine = Engine::new(model, dataset, prior, opts)?;

    let mut chains: Vec<ChainRun> = (0..config.n_chains)
        .map(|idx| engine.init_chain(idx, config))
        .collect::<Result<_, _>>()?;

    let mut target_iter = config.n_iter;
    let mut doublings = 0u32;
    loop {
        chains.par_iter_mut().for_each(|c| {
            while c.iter < target_iter {
                engine.sweep(c, config);
            }
        });
        let (ess, rhat) = engine.diagnostics(&chains, config);
        let ess_ok = ess["mu1"] >= config.ess_floor && ess["mu2"] >= config.ess_floor;
        if ess_ok || doublings >= config.max_iter_doublings {
            let converged =
                ess_ok && rhat["mu1"] <= 1.05 && rhat["mu2"] <= 1.05;
            let report = DiagnosticsReport {
                ess,
                split_rhat: rhat,
                converged,
                iterations_used: target_iter,
            };
            let draws = engine.collect(chains, config, target_iter);
            return Ok((draws, report));
        }
        doublings += 1;
        target_iter *= 2;
    }
}

/// Run the sampling machinery against the prior alone (empty likelihood).
/// Used to check that the transformed random walks leave each prior
/// marginal invariant.
pub fn run_prior_calibration(
    model: ModelKind,
    prior: &PriorSpec,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let dummy = crate::data::partition(vec![crate::data::StudyRecord {
        study_id: "prior".into(),
        sample_size: 2,
        y1: Some(0.0),
        s1: Some(1.0),
        y2: Some(0.0),
        s2: Some(1.0),
    }])
    .expect("static dataset");
    let opts = FitOptions {
        prior_only: true,
        ..Default::default()
    };
    run_mcmc_with_options(model, &dummy, prior, config, opts).map(|(draws, _)| draws)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Walker {
    Tau1,
    Tau2,
    RhoB,
    RhoW,
    Rho1,
    Rho2,
    Gamma01,
    Gamma11,
    Gamma02,
    Gamma12,
    /// Sampled standard error of a completely missing study (ISM).
    STilde { study: usize, endpoint: usize },
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Log,
    Atanh,
    Logit(f64, f64),
}

impl Transform {
    fn forward(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Atanh => v.atanh(),
            Transform::Logit(lo, hi) => ((v - lo) / (hi - v)).ln(),
        }
    }

    fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Atanh => u.tanh(),
            Transform::Logit(lo, hi) => {
                let s = 1.0 / (1.0 + (-u).exp());
                lo + (hi - lo) * s
            }
        }
    }

    /// ln |dv/du| evaluated at v.
    fn ln_jacobian(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Atanh => (-v * v).ln_1p(),
            Transform::Logit(lo, hi) => (v - lo).ln() + (hi - v).ln() - (hi - lo).ln(),
        }
    }
}

struct ChainRun {
    chain_index: usize,
    rng: ChaCha12Rng,
    params: AbsorbParams,
    latents: LatentState,
    lp: f64,
    scales: Vec<f64>,
    win_accepts: Vec<u64>,
    win_proposals: Vec<u64>,
    post_accepts: Vec<u64>,
    post_proposals: Vec<u64>,
    draws: Vec<Vec<f64>>,
    iter: u64,
}

struct Engine<'a> {
    model: ModelKind,
    dataset: &'a BivariateDataset,
    prior: &'a PriorSpec,
    opts: FitOptions,
    tab: SeTable,
    walkers: Vec<Walker>,
    /// Prior bounds of the sampled missing-study standard errors.
    s_tilde_bounds: [(f64, f64); 2],
}

impl<'a> Engine<'a> {
    fn new(
        model: ModelKind,
        dataset: &'a BivariateDataset,
        prior: &'a PriorSpec,
        opts: FitOptions,
    ) -> Result<Self, SamplerError> {
        let imputed = impute_missing_se(dataset)?;
        let tab = se_table(dataset, &imputed);

        let mut walkers = vec![Walker::Tau1, Walker::Tau2, Walker::RhoB, Walker::RhoW];
        if model != ModelKind::Nbc {
            if !opts.freeze_selection_correlations {
                walkers.push(Walker::Rho1);
                walkers.push(Walker::Rho2);
            }
            walkers.extend([
                Walker::Gamma01,
                Walker::Gamma11,
                Walker::Gamma02,
                Walker::Gamma12,
            ]);
        }
        if model == ModelKind::AbsorbIsm && !opts.prior_only {
            for study in 0..dataset.k_missing {
                walkers.push(Walker::STilde { study, endpoint: 1 });
                walkers.push(Walker::STilde { study, endpoint: 2 });
            }
        }

        let bound = |endpoint: usize| -> (f64, f64) {
            let lo = dataset.min_se(endpoint).unwrap_or(0.1);
            let hi = dataset.max_se(endpoint).unwrap_or(1.0);
            if lo < hi {
                (lo, hi)
            } else {
                // Degenerate observed range: widen slightly so the uniform
                // prior is proper.
                (lo * 0.999, lo * 1.001)
            }
        };

        Ok(Engine {
            model,
            dataset,
            prior,
            opts,
            tab,
            walkers,
            s_tilde_bounds: [bound(1), bound(2)],
        })
    }

    fn transform(&self, w: Walker) -> Transform {
        match w {
            Walker::Tau1 | Walker::Tau2 => Transform::Log,
            Walker::RhoB | Walker::RhoW | Walker::Rho1 | Walker::Rho2 => Transform::Atanh,
            Walker::Gamma01 | Walker::Gamma02 => {
                Transform::Logit(self.prior.gamma0_range.0, self.prior.gamma0_range.1)
            }
            Walker::Gamma11 => Transform::Logit(0.0, self.prior.gamma1_upper[0]),
            Walker::Gamma12 => Transform::Logit(0.0, self.prior.gamma1_upper[1]),
            Walker::STilde { endpoint, .. } => {
                let (lo, hi) = self.s_tilde_bounds[endpoint - 1];
                Transform::Logit(lo, hi)
            }
        }
    }

    fn walker_name(w: Walker) -> String {
        match w {
            Walker::Tau1 => "tau1".into(),
            Walker::Tau2 => "tau2".into(),
            Walker::RhoB => "rhoB".into(),
            Walker::RhoW => "rhoW".into(),
            Walker::Rho1 => "rho1".into(),
            Walker::Rho2 => "rho2".into(),
            Walker::Gamma01 => "gamma01".into(),
            Walker::Gamma11 => "gamma11".into(),
            Walker::Gamma02 => "gamma02".into(),
            Walker::Gamma12 => "gamma12".into(),
            Walker::STilde { study, endpoint } => format!("s_tilde[{study}].{endpoint}"),
        }
    }

    fn walker_value(c: &ChainRun, w: Walker) -> f64 {
        match w {
            Walker::Tau1 => c.params.tau1,
            Walker::Tau2 => c.params.tau2,
            Walker::RhoB => c.params.rho_b,
            Walker::RhoW => c.params.rho_w,
            Walker::Rho1 => c.params.rho1,
            Walker::Rho2 => c.params.rho2,
            Walker::Gamma01 => c.params.gamma01,
            Walker::Gamma11 => c.params.gamma11,
            Walker::Gamma02 => c.params.gamma02,
            Walker::Gamma12 => c.params.gamma12,
            Walker::STilde { study, endpoint } => {
                let pair = c.latents.s_tilde[study];
                if endpoint == 1 {
                    pair.0
                } else {
                    pair.1
                }
            }
        }
    }

    fn set_walker_value(c: &mut ChainRun, w: Walker, v: f64) {
        match w {
            Walker::Tau1 => c.params.tau1 = v,
            Walker::Tau2 => c.params.tau2 = v,
            Walker::RhoB => c.params.rho_b = v,
            Walker::RhoW => c.params.rho_w = v,
            Walker::Rho1 => c.params.rho1 = v,
            Walker::Rho2 => c.params.rho2 = v,
            Walker::Gamma01 => c.params.gamma01 = v,
            Walker::Gamma11 => c.params.gamma11 = v,
            Walker::Gamma02 => c.params.gamma02 = v,
            Walker::Gamma12 => c.params.gamma12 = v,
            Walker::STilde { study, endpoint } => {
                let pair = &mut c.latents.s_tilde[study];
                if endpoint == 1 {
                    pair.0 = v;
                } else {
                    pair.1 = v;
                }
            }
        }
    }

    fn nbc_view(p: &AbsorbParams) -> NbcParams {
        NbcParams {
            mu1: p.mu1,
            mu2: p.mu2,
            tau1: p.tau1,
            tau2: p.tau2,
            rho_w: p.rho_w,
            rho_b: p.rho_b,
        }
    }

    fn log_posterior(&self, p: &AbsorbParams, lat: &LatentState) -> f64 {
        match self.model {
            ModelKind::Nbc => {
                let nbc = Self::nbc_view(p);
                let mut lp = nbc.log_prior(self.prior);
                if !lp.is_finite() || self.opts.prior_only {
                    return lp;
                }
                lp += log_latent_mean_prior(lat, p.mu1, p.mu2, p.tau1, p.tau2, p.rho_b);
                if !lp.is_finite() {
                    return f64::NEG_INFINITY;
                }
                lp + loglik_nbc(&nbc, lat, self.dataset)
            }
            ModelKind::Absorb | ModelKind::AbsorbIsm => {
                let mut lp = p.log_prior(self.prior);
                if !lp.is_finite() || self.opts.prior_only {
                    return lp;
                }
                if self.model == ModelKind::AbsorbIsm {
                    for &(s1, s2) in &lat.s_tilde {
                        lp += ln_uniform(s1, self.s_tilde_bounds[0]);
                        lp += ln_uniform(s2, self.s_tilde_bounds[1]);
                    }
                }
                lp += log_latent_mean_prior(lat, p.mu1, p.mu2, p.tau1, p.tau2, p.rho_b);
                if !lp.is_finite() {
                    return f64::NEG_INFINITY;
                }
                lp + if self.model == ModelKind::AbsorbIsm {
                    loglik_ism_tab(p, lat, self.dataset, &self.tab)
                } else {
                    loglik_absorb_tab(p, lat, self.dataset, &self.tab)
                }
            }
        }
    }

    fn init_chain(&self, chain_index: usize, config: &SamplerConfig) -> Result<ChainRun, SamplerError> {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + chain_index as u64);

        // Complete-case moment estimates per endpoint.
        let observed = |endpoint: usize| -> Vec<f64> {
            self.dataset
                .studies
                .iter()
                .filter_map(|st| if endpoint == 1 { st.y1 } else { st.y2 })
                .collect()
        };
        let moments = |ys: &[f64]| -> (f64, f64) {
            let m = if ys.is_empty() {
                0.0
            } else {
                crate::math::mean(ys)
            };
            let sd = if ys.len() >= 2 {
                crate::math::std_dev(ys)
            } else {
                0.5
            };
            (m, sd.max(0.05))
        };
        let (mu1_0, tau1_0) = moments(&observed(1));
        let (mu2_0, tau2_0) = moments(&observed(2));

        let gamma0_mid = 0.5 * (self.prior.gamma0_range.0 + self.prior.gamma0_range.1);
        let mut params = AbsorbParams {
            mu1: mu1_0,
            mu2: mu2_0,
            tau1: tau1_0,
            tau2: tau2_0,
            gamma01: gamma0_mid,
            gamma11: 0.5 * self.prior.gamma1_upper[0],
            gamma02: gamma0_mid,
            gamma12: 0.5 * self.prior.gamma1_upper[1],
            rho1: 0.0,
            rho2: 0.0,
            rho_w: 0.0,
            rho_b: 0.0,
        };
        if self.opts.prior_only {
            params.mu1 = 0.0;
            params.mu2 = 0.0;
            params.tau1 = self.prior.tau_scale;
            params.tau2 = self.prior.tau_scale;
        }

        let mut latents = LatentState {
            theta_both: Vec::new(),
            theta_y1: Vec::new(),
            theta_y2: Vec::new(),
            z: Vec::new(),
            s_tilde: Vec::new(),
        };
        let mut lp = f64::NEG_INFINITY;
        for _attempt in 0..100 {
            latents = self.draw_initial_latents(&params, &mut rng);
            lp = self.log_posterior(&params, &latents);
            if lp.is_finite() {
                break;
            }
        }
        if !lp.is_finite() {
            return Err(SamplerError::InitializationFailed);
        }

        let n_walkers = self.walkers.len();
        Ok(ChainRun {
            chain_index,
            rng,
            params,
            latents,
            lp,
            scales: vec![0.5; n_walkers],
            win_accepts: vec![0; n_walkers],
            win_proposals: vec![0; n_walkers],
            post_accepts: vec![0; n_walkers],
            post_proposals: vec![0; n_walkers],
            draws: Vec::with_capacity(config.retained_per_chain() as usize),
            iter: 0,
        })
    }

    fn draw_initial_latents<R: Rng>(&self, p: &AbsorbParams, rng: &mut R) -> LatentState {
        if self.opts.prior_only {
            return LatentState {
                theta_both: Vec::new(),
                theta_y1: Vec::new(),
                theta_y2: Vec::new(),
                z: Vec::new(),
                s_tilde: Vec::new(),
            };
        }
        let ds = self.dataset;
        let theta_both = ds
            .both()
            .iter()
            .map(|st| (st.y1.unwrap(), st.y2.unwrap()))
            .collect();
        let theta_y1 = ds.y1_only().iter().map(|st| st.y1.unwrap()).collect();
        let theta_y2 = ds.y2_only().iter().map(|st| st.y2.unwrap()).collect();

        // z from its sign-constrained marginal given the selection parameters.
        let mut z = Vec::with_capacity(ds.n_studies());
        for i in 0..ds.n_studies() {
            let nu1 = p.gamma01 + p.gamma11 / self.tab.s1[i];
            let nu2 = p.gamma02 + p.gamma12 / self.tab.s2[i];
            let rep1 = i < ds.m1 + ds.m2;
            let rep2 = i < ds.m1 || i >= ds.m1 + ds.m2;
            let z1 = if rep1 {
                sample_truncated_normal(nu1, 1.0, 0.0, f64::INFINITY, rng)
            } else {
                sample_truncated_normal(nu1, 1.0, f64::NEG_INFINITY, 0.0, rng)
            };
            let z2 = if rep2 {
                sample_truncated_normal(nu2, 1.0, 0.0, f64::INFINITY, rng)
            } else {
                sample_truncated_normal(nu2, 1.0, f64::NEG_INFINITY, 0.0, rng)
            };
            z.push((z1, z2));
        }

        let mut s_tilde = Vec::new();
        if self.model == ModelKind::AbsorbIsm {
            for _ in 0..ds.k_missing {
                let (lo1, hi1) = self.s_tilde_bounds[0];
                let (lo2, hi2) = self.s_tilde_bounds[1];
                s_tilde.push((rng.gen_range(lo1..hi1), rng.gen_range(lo2..hi2)));
            }
        }

        LatentState {
            theta_both,
            theta_y1,
            theta_y2,
            z,
            s_tilde,
        }
    }

    fn sweep(&self, c: &mut ChainRun, config: &SamplerConfig) {
        if self.opts.prior_only {
            // The pooled effects are conditionally independent of everything
            // else under the prior: draw them directly.
            let z1: f64 = c.rng.sample(StandardNormal);
            let z2: f64 = c.rng.sample(StandardNormal);
            c.params.mu1 = self.prior.mu_sd * z1;
            c.params.mu2 = self.prior.mu_sd * z2;
        } else {
            if self.model != ModelKind::Nbc {
                self.update_z(c);
            }
            self.update_thetas(c);
            self.update_mu(c);
        }
        c.lp = self.log_posterior(&c.params, &c.latents);

        let adapting = c.iter < config.burn_in;
        for wi in 0..self.walkers.len() {
            self.scalar_step(c, wi, adapting);
        }

        c.iter += 1;
        if adapting && c.iter.is_multiple_of(config.adapt_window) {
            let batch = c.iter / config.adapt_window;
            let delta = (1.0 / (batch as f64).sqrt()).min(0.25);
            for wi in 0..self.walkers.len() {
                if c.win_proposals[wi] > 0 {
                    let rate = c.win_accepts[wi] as f64 / c.win_proposals[wi] as f64;
                    let dir = if rate > config.target_accept { 1.0 } else { -1.0 };
                    c.scales[wi] = (c.scales[wi] * (dir * delta).exp()).clamp(1e-4, 20.0);
                }
                c.win_accepts[wi] = 0;
                c.win_proposals[wi] = 0;
            }
        }

        if c.iter > config.burn_in && (c.iter - config.burn_in - 1).is_multiple_of(config.thin) {
            c.draws.push(self.draw_row(c));
        }
    }

    fn draw_row(&self, c: &ChainRun) -> Vec<f64> {
        let p = &c.params;
        match self.model {
            ModelKind::Nbc => vec![p.mu1, p.mu2, p.tau1, p.tau2, p.rho_w, p.rho_b],
            _ => vec![
                p.mu1, p.mu2, p.tau1, p.tau2, p.gamma01, p.gamma11, p.gamma02, p.gamma12, p.rho1,
                p.rho2, p.rho_w, p.rho_b,
            ],
        }
    }

    /// Latent selection variables: exact truncated-normal full conditionals.
    ///
    /// For a study reporting both endpoints the conditional of the
    /// standardized latent w1 given (r1, r2, w2) has
    ///   mean  rho1 [ (1-rho2^2) r1 - rhoW r2 + rhoW rho2 w2 ] / D,
    ///   var   [ (1-rho1^2)(1-rho2^2) - rhoW^2 ] / D,
    /// with D = 1 - rho2^2 - rhoW^2 (and symmetrically for w2). With
    /// rhoW = 0 this reduces to the familiar pairwise form
    /// N(rho r, 1 - rho^2). Single-endpoint studies use the pairwise form
    /// for the reported side and the prior marginal for the missing side.
    fn update_z(&self, c: &mut ChainRun) {
        let ds = self.dataset;
        let p = c.params;
        let rho1_sq = p.rho1 * p.rho1;
        let rho2_sq = p.rho2 * p.rho2;
        let rho_w_sq = p.rho_w * p.rho_w;
        let joint_num = (1.0 - rho1_sq) * (1.0 - rho2_sq) - rho_w_sq;

        for i in 0..ds.m1 {
            let st = &ds.studies[i];
            let (s1, s2) = (self.tab.s1[i], self.tab.s2[i]);
            let nu1 = p.gamma01 + p.gamma11 / s1;
            let nu2 = p.gamma02 + p.gamma12 / s2;
            let (theta1, theta2) = c.latents.theta_both[i];
            let r1 = (st.y1.unwrap() - theta1) / s1;
            let r2 = (st.y2.unwrap() - theta2) / s2;

            let (_, z2_old) = c.latents.z[i];
            let w2 = z2_old - nu2;
            let d1 = 1.0 - rho2_sq - rho_w_sq;
            let m1 = p.rho1 * ((1.0 - rho2_sq) * r1 - p.rho_w * r2 + p.rho_w * p.rho2 * w2) / d1;
            let v1 = joint_num / d1;
            let z1 = sample_truncated_normal(nu1 + m1, v1.sqrt(), 0.0, f64::INFINITY, &mut c.rng);

            let w1 = z1 - nu1;
            let d2 = 1.0 - rho1_sq - rho_w_sq;
            let m2 = p.rho2 * ((1.0 - rho1_sq) * r2 - p.rho_w * r1 + p.rho_w * p.rho1 * w1) / d2;
            let v2 = joint_num / d2;
            let z2 = sample_truncated_normal(nu2 + m2, v2.sqrt(), 0.0, f64::INFINITY, &mut c.rng);

            debug_assert!(z1 > 0.0 && z2 > 0.0);
            c.latents.z[i] = (z1, z2);
        }

        for (k, st) in ds.y1_only().iter().enumerate() {
            let i = ds.m1 + k;
            let (s1, s2_hat) = (self.tab.s1[i], self.tab.s2[i]);
            let nu1 = p.gamma01 + p.gamma11 / s1;
            let nu2 = p.gamma02 + p.gamma12 / s2_hat;
            let r1 = (st.y1.unwrap() - c.latents.theta_y1[k]) / s1;
            let z1 = sample_truncated_normal(
                nu1 + p.rho1 * r1,
                (1.0 - rho1_sq).sqrt(),
                0.0,
                f64::INFINITY,
                &mut c.rng,
            );
            let z2 =
                sample_truncated_normal(nu2, 1.0, f64::NEG_INFINITY, 0.0, &mut c.rng);
            debug_assert!(z1 > 0.0 && z2 < 0.0);
            c.latents.z[i] = (z1, z2);
        }

        for (k, st) in ds.y2_only().iter().enumerate() {
            let i = ds.m1 + ds.m2 + k;
            let (s1_hat, s2) = (self.tab.s1[i], self.tab.s2[i]);
            let nu1 = p.gamma01 + p.gamma11 / s1_hat;
            let nu2 = p.gamma02 + p.gamma12 / s2;
            let r2 = (st.y2.unwrap() - c.latents.theta_y2[k]) / s2;
            let z1 =
                sample_truncated_normal(nu1, 1.0, f64::NEG_INFINITY, 0.0, &mut c.rng);
            let z2 = sample_truncated_normal(
                nu2 + p.rho2 * r2,
                (1.0 - rho2_sq).sqrt(),
                0.0,
                f64::INFINITY,
                &mut c.rng,
            );
            debug_assert!(z1 < 0.0 && z2 > 0.0);
            c.latents.z[i] = (z1, z2);
        }
    }

    /// Study-level means: conjugate Gaussian full conditionals.
    fn update_thetas(&self, c: &mut ChainRun) {
        let ds = self.dataset;
        let p = c.params;
        let selection = self.model != ModelKind::Nbc;

        // Between-study precision matrix entries (shared by every study).
        let rb = p.rho_b;
        let denom = 1.0 - rb * rb;
        let q11 = 1.0 / (p.tau1 * p.tau1 * denom);
        let q22 = 1.0 / (p.tau2 * p.tau2 * denom);
        let q12 = -rb / (p.tau1 * p.tau2 * denom);

        for i in 0..ds.m1 {
            let st = &ds.studies[i];
            let (s1, s2) = (self.tab.s1[i], self.tab.s2[i]);
            let (v1, v2, cov) = if selection {
                (
                    s1 * s1 * (1.0 - p.rho1 * p.rho1),
                    s2 * s2 * (1.0 - p.rho2 * p.rho2),
                    p.rho_w * s1 * s2,
                )
            } else {
                (s1 * s1, s2 * s2, p.rho_w * s1 * s2)
            };
            let (y1_adj, y2_adj) = if selection {
                let (z1, z2) = c.latents.z[i];
                let nu1 = p.gamma01 + p.gamma11 / s1;
                let nu2 = p.gamma02 + p.gamma12 / s2;
                (
                    st.y1.unwrap() - p.rho1 * s1 * (z1 - nu1),
                    st.y2.unwrap() - p.rho2 * s2 * (z2 - nu2),
                )
            } else {
                (st.y1.unwrap(), st.y2.unwrap())
            };

            let det = v1 * v2 - cov * cov;
            let a11 = v2 / det;
            let a22 = v1 / det;
            let a12 = -cov / det;

            let p11 = q11 + a11;
            let p22 = q22 + a22;
            let p12 = q12 + a12;
            let b1 = q11 * p.mu1 + q12 * p.mu2 + a11 * y1_adj + a12 * y2_adj;
            let b2 = q12 * p.mu1 + q22 * p.mu2 + a12 * y1_adj + a22 * y2_adj;

            let det_p = p11 * p22 - p12 * p12;
            let c11 = p22 / det_p;
            let c22 = p11 / det_p;
            let c12 = -p12 / det_p;
            let mean1 = c11 * b1 + c12 * b2;
            let mean2 = c12 * b1 + c22 * b2;
            c.latents.theta_both[i] =
                sample_bivariate_normal(&mut c.rng, mean1, mean2, c11, c22, c12);
        }

        for (k, st) in ds.y1_only().iter().enumerate() {
            let i = ds.m1 + k;
            let s1 = self.tab.s1[i];
            let (obs_var, y_adj) = if selection {
                let (z1, _) = c.latents.z[i];
                let nu1 = p.gamma01 + p.gamma11 / s1;
                (
                    s1 * s1 * (1.0 - p.rho1 * p.rho1),
                    st.y1.unwrap() - p.rho1 * s1 * (z1 - nu1),
                )
            } else {
                (s1 * s1, st.y1.unwrap())
            };
            let prior_prec = 1.0 / (p.tau1 * p.tau1);
            let prec = prior_prec + 1.0 / obs_var;
            let mean = (p.mu1 * prior_prec + y_adj / obs_var) / prec;
            let z: f64 = c.rng.sample(StandardNormal);
            c.latents.theta_y1[k] = mean + z / prec.sqrt();
        }

        for (k, st) in ds.y2_only().iter().enumerate() {
            let i = ds.m1 + ds.m2 + k;
            let s2 = self.tab.s2[i];
            let (obs_var, y_adj) = if selection {
                let (_, z2) = c.latents.z[i];
                let nu2 = p.gamma02 + p.gamma12 / s2;
                (
                    s2 * s2 * (1.0 - p.rho2 * p.rho2),
                    st.y2.unwrap() - p.rho2 * s2 * (z2 - nu2),
                )
            } else {
                (s2 * s2, st.y2.unwrap())
            };
            let prior_prec = 1.0 / (p.tau2 * p.tau2);
            let prec = prior_prec + 1.0 / obs_var;
            let mean = (p.mu2 * prior_prec + y_adj / obs_var) / prec;
            let z: f64 = c.rng.sample(StandardNormal);
            c.latents.theta_y2[k] = mean + z / prec.sqrt();
        }
    }

    /// Pooled effects: conjugate bivariate Gaussian given the study means.
    fn update_mu(&self, c: &mut ChainRun) {
        let ds = self.dataset;
        let p = c.params;
        let rb = p.rho_b;
        let denom = 1.0 - rb * rb;
        let q11 = 1.0 / (p.tau1 * p.tau1 * denom);
        let q22 = 1.0 / (p.tau2 * p.tau2 * denom);
        let q12 = -rb / (p.tau1 * p.tau2 * denom);

        let prior_prec = 1.0 / (self.prior.mu_sd * self.prior.mu_sd);
        let m1 = ds.m1 as f64;

        let (sum_t1, sum_t2) = c
            .latents
            .theta_both
            .iter()
            .fold((0.0, 0.0), |(a, b), &(t1, t2)| (a + t1, b + t2));
        let sum_y1only: f64 = c.latents.theta_y1.iter().sum();
        let sum_y2only: f64 = c.latents.theta_y2.iter().sum();

        let p11 = prior_prec + m1 * q11 + c.latents.theta_y1.len() as f64 / (p.tau1 * p.tau1);
        let p22 = prior_prec + m1 * q22 + c.latents.theta_y2.len() as f64 / (p.tau2 * p.tau2);
        let p12 = m1 * q12;
        let b1 = q11 * sum_t1 + q12 * sum_t2 + sum_y1only / (p.tau1 * p.tau1);
        let b2 = q12 * sum_t1 + q22 * sum_t2 + sum_y2only / (p.tau2 * p.tau2);

        let det_p = p11 * p22 - p12 * p12;
        let c11 = p22 / det_p;
        let c22 = p11 / det_p;
        let c12 = -p12 / det_p;
        let mean1 = c11 * b1 + c12 * b2;
        let mean2 = c12 * b1 + c22 * b2;
        let draw = sample_bivariate_normal(&mut c.rng, mean1, mean2, c11, c22, c12);
        c.params.mu1 = draw.0;
        c.params.mu2 = draw.1;
    }

    fn scalar_step(&self, c: &mut ChainRun, wi: usize, adapting: bool) {
        let w = self.walkers[wi];
        let transform = self.transform(w);
        let old = Self::walker_value(c, w);
        let u = transform.forward(old);
        let step: f64 = c.rng.sample(StandardNormal);
        let proposed = transform.inverse(u + c.scales[wi] * step);

        Self::set_walker_value(c, w, proposed);
        let lp_new = self.log_posterior(&c.params, &c.latents);
        let ln_ratio =
            lp_new + transform.ln_jacobian(proposed) - c.lp - transform.ln_jacobian(old);
        let unif: f64 = c.rng.gen_range(0.0..1.0);
        let accept = lp_new.is_finite() && unif.ln() < ln_ratio;
        if accept {
            c.lp = lp_new;
        } else {
            Self::set_walker_value(c, w, old);
        }

        if adapting {
            c.win_proposals[wi] += 1;
            c.win_accepts[wi] += accept as u64;
        } else {
            c.post_proposals[wi] += 1;
            c.post_accepts[wi] += accept as u64;
        }
    }

    fn diagnostics(
        &self,
        chains: &[ChainRun],
        _config: &SamplerConfig,
    ) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
        let names = self.model.param_names();
        let mut ess = BTreeMap::new();
        let mut rhat = BTreeMap::new();
        for (idx, &name) in names.iter().enumerate() {
            let series: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.draws.iter().map(|row| row[idx]).collect())
                .collect();
            let total: f64 = series
                .iter()
                .map(|s| effective_sample_size(s).value)
                .sum();
            ess.insert(name.to_string(), total);
            rhat.insert(name.to_string(), split_rhat(&series));
        }
        (ess, rhat)
    }

    fn collect(
        &self,
        chains: Vec<ChainRun>,
        config: &SamplerConfig,
        iterations_used: u64,
    ) -> PosteriorDraws {
        let fingerprint = if self.opts.prior_only {
            "prior-only".to_string()
        } else {
            self.dataset.fingerprint()
        };
        let mut config = config.clone();
        config.n_iter = iterations_used;
        PosteriorDraws {
            model: self.model,
            param_names: self.model.param_names().to_vec(),
            chains: chains
                .into_iter()
                .map(|c| {
                    let mut accept_rates = BTreeMap::new();
                    for (wi, &w) in self.walkers.iter().enumerate() {
                        if c.post_proposals[wi] > 0 {
                            accept_rates.insert(
                                Self::walker_name(w),
                                c.post_accepts[wi] as f64 / c.post_proposals[wi] as f64,
                            );
                        }
                    }
                    Chain {
                        chain_index: c.chain_index,
                        draws: c.draws,
                        accept_rates,
                    }
                })
                .collect(),
            dataset_fingerprint: fingerprint,
            config,
        }
    }
}

fn ln_uniform(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if x > lo && x < hi {
        -(hi - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, StudyRecord};
    use crate::math::{mean, variance};
    use approx::assert_relative_eq;

    fn record(id: &str, n: u32, o1: Option<(f64, f64)>, o2: Option<(f64, f64)>) -> StudyRecord {
        StudyRecord {
            study_id: id.into(),
            sample_size: n,
            y1: o1.map(|(y, _)| y),
            s1: o1.map(|(_, s)| s),
            y2: o2.map(|(y, _)| y),
            s2: o2.map(|(_, s)| s),
        }
    }

    fn small_dataset() -> crate::data::BivariateDataset {
        partition(vec![
            record("a", 80, Some((0.42, 0.30)), Some((-0.21, 0.25))),
            record("b", 60, Some((0.15, 0.40)), Some((-0.35, 0.30))),
            record("c", 90, Some((0.28, 0.35)), Some((-0.10, 0.28))),
            record("d", 40, Some((0.55, 0.45)), None),
            record("e", 70, Some((0.05, 0.38)), None),
            record("f", 55, None, Some((-0.44, 0.33))),
        ])
        .unwrap()
    }

    fn quick_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: 2,
            n_iter: 600,
            burn_in: 200,
            thin: 1,
            seed,
            ess_floor: 1.0,
            max_iter_doublings: 0,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SamplerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.burn_in = cfg.n_iter;
        assert!(cfg.validate().is_err());

        let mut cfg = SamplerConfig::default();
        cfg.thin = 1000;
        assert!(cfg.validate().is_err()); // fewer than 100 retained
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let cfg = quick_config(11);
        let (a, _) = run_mcmc(ModelKind::Absorb, &ds, &prior, &cfg).unwrap();
        let (b, _) = run_mcmc(ModelKind::Absorb, &ds, &prior, &cfg).unwrap();
        assert_eq!(a.chains.len(), b.chains.len());
        for (ca, cb) in a.chains.iter().zip(&b.chains) {
            assert_eq!(ca.draws.len(), cb.draws.len());
            for (ra, rb) in ca.draws.iter().zip(&cb.draws) {
                for (va, vb) in ra.iter().zip(rb) {
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
        }
    }

    #[test]
    fn different_chains_differ() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let cfg = quick_config(11);
        let (a, _) = run_mcmc(ModelKind::Absorb, &ds, &prior, &cfg).unwrap();
        assert_ne!(a.chains[0].draws[0], a.chains[1].draws[0]);
    }

    #[test]
    fn retained_draws_stay_in_support() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let cfg = quick_config(5);
        let (draws, _) = run_mcmc(ModelKind::Absorb, &ds, &prior, &cfg).unwrap();
        assert_eq!(
            draws.n_retained(),
            (cfg.n_chains as u64 * cfg.retained_per_chain()) as usize
        );
        let idx = |n: &str| draws.param_index(n).unwrap();
        for chain in &draws.chains {
            for row in &chain.draws {
                let spec_ok = AbsorbParams {
                    mu1: row[idx("mu1")],
                    mu2: row[idx("mu2")],
                    tau1: row[idx("tau1")],
                    tau2: row[idx("tau2")],
                    gamma01: row[idx("gamma01")],
                    gamma11: row[idx("gamma11")],
                    gamma02: row[idx("gamma02")],
                    gamma12: row[idx("gamma12")],
                    rho1: row[idx("rho1")],
                    rho2: row[idx("rho2")],
                    rho_w: row[idx("rhoW")],
                    rho_b: row[idx("rhoB")],
                }
                .is_feasible(&prior);
                assert!(spec_ok, "draw outside support: {row:?}");
            }
        }
    }

    #[test]
    fn z_sign_patterns_match_partition() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let engine = Engine::new(ModelKind::Absorb, &ds, &prior, FitOptions::default()).unwrap();
        let cfg = quick_config(9);
        let mut chain = engine.init_chain(0, &cfg).unwrap();
        for _ in 0..50 {
            engine.sweep(&mut chain, &cfg);
            for (i, &(z1, z2)) in chain.latents.z.iter().enumerate() {
                let rep1 = i < ds.m1 + ds.m2;
                let rep2 = i < ds.m1 || i >= ds.m1 + ds.m2;
                assert_eq!(z1 > 0.0, rep1, "study {i}");
                assert_eq!(z2 > 0.0, rep2, "study {i}");
            }
        }
    }

    #[test]
    fn conjugate_theta_update_matches_closed_form() {
        // Single both-study with every other parameter frozen: the theta
        // draws must reproduce the closed-form Gaussian posterior.
        let ds = partition(vec![record("a", 50, Some((0.8, 0.5)), Some((-0.4, 0.4)))]).unwrap();
        let prior = PriorSpec::for_dataset(&ds);
        let engine = Engine::new(ModelKind::Absorb, &ds, &prior, FitOptions::default()).unwrap();
        let cfg = quick_config(3);
        let mut chain = engine.init_chain(0, &cfg).unwrap();
        chain.params = AbsorbParams {
            mu1: 0.3,
            mu2: -0.2,
            tau1: 0.6,
            tau2: 0.5,
            gamma01: -0.5,
            gamma11: 0.2,
            gamma02: -0.5,
            gamma12: 0.2,
            rho1: 0.4,
            rho2: -0.3,
            rho_w: 0.3,
            rho_b: 0.4,
        };
        chain.latents.z = vec![(0.9, 1.4)];

        let mut t1 = Vec::with_capacity(50_000);
        let mut t2 = Vec::with_capacity(50_000);
        for _ in 0..50_000 {
            engine.update_thetas(&mut chain);
            let (a, b) = chain.latents.theta_both[0];
            t1.push(a);
            t2.push(b);
        }

        // Closed form: precision = SigmaB^-1 + C^-1, b = SigmaB^-1 mu + C^-1 y_adj.
        let p = chain.params;
        let (s1, s2) = (0.5, 0.4);
        let nu1 = p.gamma01 + p.gamma11 / s1;
        let nu2 = p.gamma02 + p.gamma12 / s2;
        let (z1, z2) = chain.latents.z[0];
        let y1_adj = 0.8 - p.rho1 * s1 * (z1 - nu1);
        let y2_adj = -0.4 - p.rho2 * s2 * (z2 - nu2);
        let v1 = s1 * s1 * (1.0 - p.rho1 * p.rho1);
        let v2 = s2 * s2 * (1.0 - p.rho2 * p.rho2);
        let cov = p.rho_w * s1 * s2;
        let det_c = v1 * v2 - cov * cov;
        let (a11, a22, a12) = (v2 / det_c, v1 / det_c, -cov / det_c);
        let denom = 1.0 - p.rho_b * p.rho_b;
        let q11 = 1.0 / (p.tau1 * p.tau1 * denom);
        let q22 = 1.0 / (p.tau2 * p.tau2 * denom);
        let q12 = -p.rho_b / (p.tau1 * p.tau2 * denom);
        let (p11, p22, p12) = (q11 + a11, q22 + a22, q12 + a12);
        let b1 = q11 * p.mu1 + q12 * p.mu2 + a11 * y1_adj + a12 * y2_adj;
        let b2 = q12 * p.mu1 + q22 * p.mu2 + a12 * y1_adj + a22 * y2_adj;
        let det_p = p11 * p22 - p12 * p12;
        let (c11, c22, c12) = (p22 / det_p, p11 / det_p, -p12 / det_p);
        let m1_expect = c11 * b1 + c12 * b2;
        let m2_expect = c12 * b1 + c22 * b2;

        assert_relative_eq!(mean(&t1), m1_expect, max_relative = 0.02);
        assert_relative_eq!(mean(&t2), m2_expect, max_relative = 0.02);
        assert_relative_eq!(variance(&t1), c11, max_relative = 0.02);
        assert_relative_eq!(variance(&t2), c22, max_relative = 0.02);
    }

    #[test]
    fn conjugate_mu_update_matches_closed_form() {
        // One both-study with theta and the scale parameters frozen: mu
        // draws must match the closed-form bivariate Gaussian conditional.
        let ds = partition(vec![record("a", 50, Some((0.8, 0.5)), Some((-0.4, 0.4)))]).unwrap();
        let prior = PriorSpec::for_dataset(&ds);
        let engine = Engine::new(ModelKind::Nbc, &ds, &prior, FitOptions::default()).unwrap();
        let cfg = quick_config(13);
        let mut chain = engine.init_chain(0, &cfg).unwrap();
        chain.params.tau1 = 0.6;
        chain.params.tau2 = 0.5;
        chain.params.rho_b = 0.4;
        chain.latents.theta_both = vec![(0.9, -0.3)];

        let mut m1 = Vec::with_capacity(50_000);
        let mut m2 = Vec::with_capacity(50_000);
        for _ in 0..50_000 {
            engine.update_mu(&mut chain);
            m1.push(chain.params.mu1);
            m2.push(chain.params.mu2);
        }

        // Precision: prior + one theta observation under SigmaB.
        let p = chain.params;
        let denom = 1.0 - p.rho_b * p.rho_b;
        let q11 = 1.0 / (p.tau1 * p.tau1 * denom);
        let q22 = 1.0 / (p.tau2 * p.tau2 * denom);
        let q12 = -p.rho_b / (p.tau1 * p.tau2 * denom);
        let prior_prec = 1.0 / (prior.mu_sd * prior.mu_sd);
        let (p11, p22, p12) = (prior_prec + q11, prior_prec + q22, q12);
        let b1 = q11 * 0.9 + q12 * -0.3;
        let b2 = q12 * 0.9 + q22 * -0.3;
        let det_p = p11 * p22 - p12 * p12;
        let (c11, c22, c12) = (p22 / det_p, p11 / det_p, -p12 / det_p);
        let mean1 = c11 * b1 + c12 * b2;
        let mean2 = c12 * b1 + c22 * b2;

        assert_relative_eq!(mean(&m1), mean1, max_relative = 0.02);
        assert_relative_eq!(mean(&m2), mean2, max_relative = 0.02);
        assert_relative_eq!(variance(&m1), c11, max_relative = 0.02);
        assert_relative_eq!(variance(&m2), c22, max_relative = 0.02);
    }

    #[test]
    fn ess_floor_forces_doubling() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let cfg = SamplerConfig {
            n_chains: 2,
            n_iter: 300,
            burn_in: 100,
            thin: 1,
            seed: 4,
            ess_floor: 1e9, // unreachable: always doubles
            max_iter_doublings: 2,
            ..Default::default()
        };
        let (draws, diag) = run_mcmc(ModelKind::Nbc, &ds, &prior, &cfg).unwrap();
        assert_eq!(diag.iterations_used, 1200);
        assert!(!diag.converged);
        // Retained draws cover the extended run.
        assert_eq!(draws.chains[0].draws.len() as u64, 1200 - 100);
    }

    #[test]
    fn doubling_is_continuation_of_the_same_stream() {
        // A run that doubles once must reproduce, as a prefix, the draws of
        // the same run configured with the doubled iteration count.
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let forced = SamplerConfig {
            n_chains: 1,
            n_iter: 300,
            burn_in: 100,
            seed: 8,
            ess_floor: 1e9,
            max_iter_doublings: 1,
            ..Default::default()
        };
        let (doubled, _) = run_mcmc(ModelKind::Nbc, &ds, &prior, &forced).unwrap();

        let direct_cfg = SamplerConfig {
            n_iter: 600,
            ess_floor: 1.0,
            max_iter_doublings: 0,
            ..forced
        };
        let (direct, _) = run_mcmc(ModelKind::Nbc, &ds, &prior, &direct_cfg).unwrap();
        assert_eq!(doubled.chains[0].draws, direct.chains[0].draws);
    }

    #[test]
    fn nbc_draws_have_six_columns() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let (draws, _) = run_mcmc(ModelKind::Nbc, &ds, &prior, &quick_config(2)).unwrap();
        assert_eq!(draws.param_names, NBC_PARAMS.to_vec());
        assert_eq!(draws.chains[0].draws[0].len(), 6);
    }

    #[test]
    fn draws_csv_round_trips() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let (draws, _) = run_mcmc(ModelKind::Nbc, &ds, &prior, &quick_config(6)).unwrap();
        let mut buf = Vec::new();
        draws.write_draws_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("chain,iter,mu1,mu2,tau1,tau2,rhoW,rhoB\n"));
        let back = PosteriorDraws::read_draws_csv(
            &text,
            ModelKind::Nbc,
            draws.dataset_fingerprint.clone(),
            draws.config.clone(),
        )
        .unwrap();
        assert_eq!(back.chains.len(), draws.chains.len());
        for (ca, cb) in draws.chains.iter().zip(&back.chains) {
            assert_eq!(ca.draws, cb.draws);
        }
    }

    #[test]
    fn frozen_selection_correlations_stay_at_zero() {
        let ds = small_dataset();
        let prior = PriorSpec::for_dataset(&ds);
        let opts = FitOptions {
            freeze_selection_correlations: true,
            ..Default::default()
        };
        let (draws, _) =
            run_mcmc_with_options(ModelKind::Absorb, &ds, &prior, &quick_config(7), opts).unwrap();
        for v in draws.combined("rho1") {
            assert_eq!(v, 0.0);
        }
        for v in draws.combined("rho2") {
            assert_eq!(v, 0.0);
        }
    }
}
