//! Shared plumbing: error-to-exit-code mapping, run manifests, and the
//! run-directory lock.

use std::fs;
use std::path::{Path, PathBuf};

use absorb::sampler::{ModelKind, SamplerConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations: exit 2.
    Usage(String),
    /// Unusable input data: exit 1.
    Data(String),
    /// Filesystem problems: exit 1.
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Everything needed to reproduce a run, written next to its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub flags: serde_json::Value,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler_config: Option<SamplerConfig>,
    pub started_utc: String,
    pub finished_utc: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn begin(command: &str, flags: serde_json::Value, seed: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            flags,
            seed,
            dataset_fingerprint: None,
            model: None,
            sampler_config: None,
            started_utc: chrono::Utc::now().to_rfc3339(),
            finished_utc: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(mut self, dir: &Path) -> Result<(), CliError> {
        self.finished_utc = chrono::Utc::now().to_rfc3339();
        self.outputs.push("manifest.json".into());
        let body = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(dir.join("manifest.json"), body)?;
        Ok(())
    }
}

/// Exclusive ownership of a run directory for the duration of a command.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Usage(
                format!(
                    "run directory {} is locked by another process (remove {} if stale)",
                    dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Write a file, mapping errors to the CLI error type.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

/// The subset of a fit manifest the impact command needs.
#[derive(Debug, Deserialize)]
pub struct FitMetadata {
    pub dataset_fingerprint: Option<String>,
    pub model: Option<ModelKind>,
    pub sampler_config: Option<SamplerConfig>,
}

pub fn read_fit_dir(dir: &Path) -> Result<(absorb::PosteriorDraws, String), CliError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| {
        CliError::Data(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let meta: FitMetadata = serde_json::from_str(&manifest_text)
        .map_err(|e| CliError::Data(format!("bad manifest {}: {e}", manifest_path.display())))?;
    let model = meta
        .model
        .ok_or_else(|| CliError::Data(format!("{} is not a fit manifest", manifest_path.display())))?;
    let fingerprint = meta.dataset_fingerprint.ok_or_else(|| {
        CliError::Data(format!("{} lacks a dataset fingerprint", manifest_path.display()))
    })?;
    let config = meta.sampler_config.ok_or_else(|| {
        CliError::Data(format!("{} lacks the sampler config", manifest_path.display()))
    })?;

    let draws_path = dir.join("draws.csv");
    let draws_text = fs::read_to_string(&draws_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", draws_path.display())))?;
    let draws =
        absorb::PosteriorDraws::read_draws_csv(&draws_text, model, fingerprint.clone(), config)
            .map_err(CliError::Data)?;
    Ok((draws, fingerprint))
}
