//! `absorb` - fit outcome-reporting-bias models to bivariate meta-analysis
//! data, quantify the impact of the bias, and run simulation experiments.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 fit completed but
//! did not converge.

mod common;
mod fit;
mod impact_cmd;
mod simulate;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "absorb", version, about = "Bias-corrected bivariate meta-analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset and write draws, summaries, and diagnostics.
    Fit(fit::FitArgs),
    /// Compare a bias-corrected fit against a non-bias-corrected one.
    Impact(impact_cmd::ImpactArgs),
    /// Run a simulation experiment and write the metrics table.
    Simulate(simulate::SimulateArgs),
}

fn main() {
    // Optional cap on worker threads for chains and replications.
    if let Ok(raw) = std::env::var("ABSORB_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }

    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Impact(args) => impact_cmd::run(args),
        Command::Simulate(args) => simulate::run(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
