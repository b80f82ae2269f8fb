//! The `fit` subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use absorb::data::{parse_dataset, ParseOptions};
use absorb::impact::credible_interval;
use absorb::math::{mean, std_dev};
use absorb::model::PriorSpec;
use absorb::sampler::{run_mcmc, ModelKind, SamplerConfig, SamplerError};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::common::{write_file, CliError, DirLock, RunManifest};

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input CSV with columns study_id,n,y1,s1,y2,s2.
    #[arg(long)]
    pub data: PathBuf,
    /// Model to fit: absorb, nbc, or ism.
    #[arg(long)]
    pub model: ModelKind,
    /// Number of completely missing studies (required by --model ism).
    #[arg(long)]
    pub missing_studies: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 50_000)]
    pub iters: u64,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: u64,
    #[arg(long, default_value_t = 1)]
    pub thin: u64,
    /// RNG seed; drawn from system entropy (and recorded) when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace y1 by ln(y1); its standard error must already be log-scale.
    #[arg(long)]
    pub log_y1: bool,
    /// Replace y2 by ln(y2); its standard error must already be log-scale.
    #[arg(long)]
    pub log_y2: bool,
    /// Effective-sample-size floor for the pooled effects.
    #[arg(long, default_value_t = 100.0)]
    pub ess_floor: f64,
    /// Maximum number of iteration doublings when the floor is missed.
    #[arg(long, default_value_t = 2)]
    pub max_doublings: u32,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ParameterSummary {
    mean: f64,
    sd: f64,
    ci_lower: f64,
    ci_upper: f64,
}

pub fn run(args: FitArgs) -> Result<i32, CliError> {
    if args.model == ModelKind::AbsorbIsm && args.missing_studies.is_none() {
        return Err(CliError::Usage(
            "--model ism requires --missing-studies K (the known count of completely missing studies)".into(),
        ));
    }
    if args.model != ModelKind::AbsorbIsm && args.missing_studies.is_some() {
        return Err(CliError::Usage(
            "--missing-studies only applies to --model ism".into(),
        ));
    }

    let csv_text = fs::read_to_string(&args.data)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.data.display())))?;
    let options = ParseOptions {
        log_transform_y1: args.log_y1,
        log_transform_y2: args.log_y2,
        ism_mode: args.model == ModelKind::AbsorbIsm,
    };
    let (mut dataset, report) =
        parse_dataset(&csv_text, options).map_err(|e| CliError::Data(e.to_string()))?;
    for (id, msg) in &report.warnings {
        eprintln!("warning: study `{id}`: {msg}");
    }

    if let Some(k) = args.missing_studies {
        if dataset.k_missing > 0 && dataset.k_missing != k {
            return Err(CliError::Data(format!(
                "--missing-studies {k} disagrees with the {} neither-outcome rows in the data",
                dataset.k_missing
            )));
        }
        dataset.k_missing = k;
    }

    let seed = args.seed.unwrap_or_else(rand::random);
    let config = SamplerConfig {
        n_chains: args.chains,
        n_iter: args.iters,
        burn_in: args.burnin,
        thin: args.thin,
        seed,
        ess_floor: args.ess_floor,
        max_iter_doublings: args.max_doublings,
        ..Default::default()
    };
    let prior = PriorSpec::for_dataset(&dataset);

    let _lock = DirLock::acquire(&args.out)?;
    let mut manifest = RunManifest::begin(
        "fit",
        json!({
            "data": args.data.display().to_string(),
            "model": args.model.tag(),
            "missing_studies": args.missing_studies,
            "chains": args.chains,
            "iters": args.iters,
            "burnin": args.burnin,
            "thin": args.thin,
            "log_y1": args.log_y1,
            "log_y2": args.log_y2,
            "ess_floor": args.ess_floor,
            "max_doublings": args.max_doublings,
            "out": args.out.display().to_string(),
        }),
        seed,
    );

    let (draws, diagnostics) = match run_mcmc(args.model, &dataset, &prior, &config) {
        Ok(result) => result,
        Err(SamplerError::InvalidConfig(msg)) => return Err(CliError::Usage(msg)),
        Err(e) => return Err(CliError::Data(e.to_string())),
    };

    // Posterior summaries per parameter.
    let mut parameters = BTreeMap::new();
    for name in &draws.param_names {
        let series = draws.combined(name);
        let (ci_lower, ci_upper) =
            credible_interval(&series, 0.95).map_err(|e| CliError::Data(e.to_string()))?;
        parameters.insert(
            name.to_string(),
            ParameterSummary {
                mean: mean(&series),
                sd: std_dev(&series),
                ci_lower,
                ci_upper,
            },
        );
    }
    let summary = json!({
        "model": args.model.tag(),
        "dataset_fingerprint": draws.dataset_fingerprint,
        "n_studies": dataset.n_studies(),
        "partition": { "m1": dataset.m1, "m2": dataset.m2, "m3": dataset.m3,
                       "k_missing": dataset.k_missing },
        "parameters": parameters,
    });

    let mut draws_csv = Vec::new();
    draws.write_draws_csv(&mut draws_csv)?;
    write_file(&args.out, "draws.csv", &draws_csv)?;
    write_file(
        &args.out,
        "summary.json",
        serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Io(e.to_string()))?
            .as_bytes(),
    )?;
    write_file(
        &args.out,
        "diagnostics.json",
        serde_json::to_string_pretty(&diagnostics)
            .map_err(|e| CliError::Io(e.to_string()))?
            .as_bytes(),
    )?;

    manifest.dataset_fingerprint = Some(draws.dataset_fingerprint.clone());
    manifest.model = Some(args.model);
    manifest.sampler_config = Some(draws.config.clone());
    manifest.outputs = vec![
        "draws.csv".into(),
        "summary.json".into(),
        "diagnostics.json".into(),
    ];
    manifest.finish(&args.out)?;

    if diagnostics.converged {
        Ok(0)
    } else {
        eprintln!(
            "fit completed but did not converge (ess mu1 {:.1}, mu2 {:.1})",
            diagnostics.ess["mu1"], diagnostics.ess["mu2"]
        );
        Ok(3)
    }
}
