//! The `impact` subcommand.

use std::path::PathBuf;

use absorb::impact::{d_measure, ImpactError};
use clap::Args;
use serde_json::json;

use crate::common::{read_fit_dir, write_file, CliError, DirLock, RunManifest};

#[derive(Args, Debug)]
pub struct ImpactArgs {
    /// Directory holding the bias-corrected fit.
    #[arg(long)]
    pub abs_fit: PathBuf,
    /// Directory holding the non-bias-corrected fit.
    #[arg(long)]
    pub nbc_fit: PathBuf,
    /// Grid size for the marginal density estimates.
    #[arg(long, default_value_t = 512)]
    pub grid_1d: usize,
    /// Grid size per dimension for the joint density estimates.
    #[arg(long, default_value_t = 128)]
    pub grid_2d: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: ImpactArgs) -> Result<i32, CliError> {
    let (draws_abs, fp_abs) = read_fit_dir(&args.abs_fit)?;
    let (draws_nbc, fp_nbc) = read_fit_dir(&args.nbc_fit)?;
    if fp_abs != fp_nbc {
        return Err(CliError::Data(format!(
            "dataset fingerprints differ: {fp_abs} vs {fp_nbc}"
        )));
    }

    let (report, grids) = match d_measure(&draws_abs, &draws_nbc, args.grid_1d, args.grid_2d) {
        Ok(out) => out,
        Err(ImpactError::FingerprintMismatch(a, b)) => {
            return Err(CliError::Data(format!(
                "dataset fingerprints differ: {a} vs {b}"
            )))
        }
        Err(e) => return Err(CliError::Data(e.to_string())),
    };

    let _lock = DirLock::acquire(&args.out)?;
    let mut manifest = RunManifest::begin(
        "impact",
        json!({
            "abs_fit": args.abs_fit.display().to_string(),
            "nbc_fit": args.nbc_fit.display().to_string(),
            "grid_1d": args.grid_1d,
            "grid_2d": args.grid_2d,
            "out": args.out.display().to_string(),
        }),
        0,
    );
    manifest.dataset_fingerprint = Some(fp_abs);

    write_file(
        &args.out,
        "dreport.json",
        serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Io(e.to_string()))?
            .as_bytes(),
    )?;

    let grid_files = [
        ("density_mu1_abs.csv", &grids.mu1_abs),
        ("density_mu1_nbc.csv", &grids.mu1_nbc),
        ("density_mu2_abs.csv", &grids.mu2_abs),
        ("density_mu2_nbc.csv", &grids.mu2_nbc),
        ("density_joint_abs.csv", &grids.joint_abs),
        ("density_joint_nbc.csv", &grids.joint_nbc),
    ];
    for (name, grid) in grid_files {
        let mut buf = Vec::new();
        grid.write_csv(&mut buf)?;
        write_file(&args.out, name, &buf)?;
        manifest.outputs.push(name.into());
    }
    manifest.outputs.insert(0, "dreport.json".into());
    manifest.finish(&args.out)?;

    println!(
        "D(mu1) = {:.3}  D(mu2) = {:.3}  D(joint) = {:.3}",
        report.d1, report.d2, report.d12
    );
    Ok(0)
}
