//! Report rendering: the combined CSV (pinned column order), per-cell JSON,
//! simulation report files, and the reproducibility manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use medshift_core::{EstimateResult, SimReport};

use crate::CliError;

/// Column order pinned for visual comparability with published mediation
/// tables: folds, estimator, label, estimand, then the IIE block.
pub const COMBINED_HEADER: &str = "folds,estimator,label,estimand,IIE,SE,CIlow,CIupp";

/// One combined-CSV row rendered from a stored estimate, three decimals
/// throughout.
pub fn combined_row(label: &str, result: &EstimateResult) -> Result<String, CliError> {
    let iie = result
        .iie_hat
        .ok_or_else(|| CliError::Estimation("result lacks the assembled IIE block".into()))?;
    let se = result.se_iie.unwrap_or(f64::NAN);
    let lo = result.ci_iie_low.unwrap_or(f64::NAN);
    let hi = result.ci_iie_high.unwrap_or(f64::NAN);
    Ok(format!(
        "{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
        result.j,
        result.estimator.as_str(),
        label,
        result.kind.as_str(),
        iie,
        se,
        lo,
        hi
    ))
}

/// A simulation report as CSV, one row per cell.
pub fn sim_report_csv(report: &SimReport) -> String {
    let mut out = String::from(
        "scenario,estimand,estimator,n,reps,exclusions,truth,bias,mc_se_bias,rmse,empirical_se,mean_estimated_se,coverage\n",
    );
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.scenario,
            c.estimand.as_str(),
            c.estimator.as_str(),
            c.n,
            c.reps,
            c.exclusions,
            c.truth,
            c.bias,
            c.mc_se_bias,
            c.rmse,
            c.empirical_se,
            c.mean_estimated_se,
            c.coverage
        ));
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Estimation(format!("serialization failed: {e}")))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Estimation(format!("cannot write {}: {e}", path.display())))
}

/// Everything needed to reproduce a run byte-exactly: the hash of the
/// resolved configuration (after flag overrides), the seed list, and the
/// artifact versions.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub medshift: &'static str,
    pub medshift_core: &'static str,
}

impl Manifest {
    pub fn new<T: Serialize>(
        command: &str,
        resolved_config: &T,
        seeds: &[u64],
    ) -> Result<Self, CliError> {
        let bytes = serde_json::to_vec(resolved_config)
            .map_err(|e| CliError::Config(format!("config serialization failed: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        Ok(Manifest {
            command: command.to_string(),
            config_sha256: hex::encode(hasher.finalize()),
            seeds: seeds.to_vec(),
            versions: Versions {
                medshift: env!("CARGO_PKG_VERSION"),
                medshift_core: medshift_core::VERSION,
            },
            outputs: Vec::new(),
        })
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        write_json(&out_dir.join("manifest.json"), self)
    }
}
