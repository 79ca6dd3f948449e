use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::ExperimentResult;
use crate::error::{Error, Result};
use crate::nn::content_hash;

pub const CSV_HEADER: &str = "seed,iteration,mean_reward,agreement_rate";

/// Per-iteration metrics, one row per seed and iteration.
pub fn metrics_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in result.records() {
        let agreement = r.agreement_rate.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.seed, r.iteration, r.mean_reward, agreement).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDigest {
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub weights: Vec<WeightDigest>,
}

impl Manifest {
    pub fn of(result: &ExperimentResult) -> Self {
        Manifest {
            config: result.config.clone(),
            weights: result
                .runs
                .iter()
                .map(|r| WeightDigest {
                    seed: r.seed,
                    sha256: content_hash(&r.weights),
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// Write `<prefix>.csv` and `<prefix>.manifest.toml` into `dir`.
pub fn emit_results(result: &ExperimentResult, dir: &Path, prefix: &str) -> Result<EmittedFiles> {
    if result.records().next().is_none() {
        return Err(Error::usage("no metrics to write"));
    }
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{prefix}.csv"));
    let manifest = dir.join(format!("{prefix}.manifest.toml"));
    fs::write(&csv, metrics_csv(result))?;
    fs::write(&manifest, Manifest::of(result).to_toml())?;
    Ok(EmittedFiles { csv, manifest })
}
