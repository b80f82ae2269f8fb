//! The `simulate` subcommand.

use std::path::PathBuf;

use absorb::sampler::SamplerConfig;
use absorb::sim::{run_experiment, Design, SimError, SimModel};
use clap::Args;
use serde_json::json;

use crate::common::{write_file, CliError, DirLock, RunManifest};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Built-in experiment design (1-4).
    #[arg(long)]
    pub experiment: u8,
    /// Number of studies per simulated dataset.
    #[arg(long)]
    pub n: usize,
    /// Number of replications.
    #[arg(long)]
    pub reps: usize,
    /// Base seed; replication r uses seed + r for its dataset.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated models to fit: absorb, nbc, complete-case.
    #[arg(long, value_delimiter = ',', default_value = "absorb,nbc,complete-case")]
    pub models: Vec<SimModel>,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 50_000)]
    pub iters: u64,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: SimulateArgs) -> Result<i32, CliError> {
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if !(1..=4).contains(&args.experiment) {
        return Err(CliError::Usage(format!(
            "unknown experiment design {} (1-4)",
            args.experiment
        )));
    }
    if args.models.is_empty() {
        return Err(CliError::Usage("--models must name at least one model".into()));
    }
    if args.n < 5 {
        return Err(CliError::Usage("--n must be at least 5".into()));
    }

    let seed = args.seed.unwrap_or_else(rand::random);
    let config = SamplerConfig {
        n_chains: args.chains,
        n_iter: args.iters,
        burn_in: args.burnin,
        seed,
        ..Default::default()
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let design = Design::Experiment(args.experiment);
    let table = match run_experiment(&design, args.n, args.reps, &args.models, &config, seed) {
        Ok(table) => table,
        Err(SimError::UnknownDesign(k)) => {
            return Err(CliError::Usage(format!("unknown experiment design {k}")))
        }
        Err(e) => return Err(CliError::Data(e.to_string())),
    };

    for (model, bad) in &table.nonconverged {
        if *bad * 5 > args.reps {
            eprintln!(
                "warning: {model}: {bad}/{} replications failed or did not converge",
                args.reps
            );
        }
    }

    let _lock = DirLock::acquire(&args.out)?;
    let mut manifest = RunManifest::begin(
        "simulate",
        json!({
            "experiment": args.experiment,
            "n": args.n,
            "reps": args.reps,
            "models": args.models.iter().map(|m| m.label()).collect::<Vec<_>>(),
            "chains": args.chains,
            "iters": args.iters,
            "burnin": args.burnin,
            "out": args.out.display().to_string(),
            "realized_missing": table.realized_missing,
            "nonconverged": table.nonconverged,
        }),
        seed,
    );

    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_file(&args.out, "metrics.csv", &csv)?;
    manifest.outputs.push("metrics.csv".into());
    manifest.finish(&args.out)?;

    print!("{}", String::from_utf8_lossy(&csv));
    Ok(0)
}
