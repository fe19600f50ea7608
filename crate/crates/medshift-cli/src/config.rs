//! Run configuration: a single JSON document per run, with a handful of
//! scalar fields overridable from the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use medshift_core::learners::Family;
use medshift_core::nuisance::{Expansion, NuisanceConfig};
use medshift_core::{EstimandKind, EstimatorKind};

use crate::CliError;

/// Column roles. Confounder columns whose cells fail to parse as numbers
/// are treated as categorical and dummy-coded (lexicographic level order,
/// first level dropped as the reference).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub exposure: String,
    #[serde(default)]
    pub confounders: Vec<String>,
    pub mediators: Vec<String>,
    /// Mediator partition for the flow-on estimand, by column name.
    #[serde(default)]
    pub partition: Option<PartitionNames>,
    /// Exposure coding; defaults to a' = 1, a* = 0.
    #[serde(default = "default_a_prime")]
    pub a_prime: f64,
    #[serde(default)]
    pub a_star: f64,
}

fn default_a_prime() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionNames {
    #[serde(default)]
    pub z: Vec<String>,
    pub k: String,
    #[serde(default)]
    pub l: Vec<String>,
}

/// Candidate library choice for every nuisance fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StackChoice {
    /// Intercept-only, GLM, ridge, lasso, and boosted stumps, weighted by
    /// cross-validated risk.
    #[default]
    Full,
    /// A single GLM per nuisance; no inner cross-validation.
    Glm,
    /// A single GLM on a fully interacted (saturated) design.
    GlmSaturated,
}

/// What a `simulate` run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    Consistency,
    Robustness,
    Coverage,
}

/// The whole run configuration. Unknown fields are rejected so typos in a
/// config file fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // ---- estimate ----
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default = "default_estimands")]
    pub estimands: Vec<EstimandKind>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Fold counts to run; the grid is folds x estimators x estimands.
    #[serde(default = "default_folds")]
    pub folds: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_true")]
    pub stabilize: bool,
    #[serde(default = "default_trunc")]
    pub trunc: f64,
    #[serde(default)]
    pub stack: StackChoice,
    /// Free-form row label for the combined CSV (e.g. a mediator
    /// dichotomization cutoff when comparing analyses across cutoffs).
    #[serde(default = "default_label")]
    pub label: String,
    /// Override the automatic outcome-stratification policy.
    #[serde(default)]
    pub stratified: Option<bool>,

    // ---- oracle / simulate ----
    /// Law file; omitted means the canonical fixture law.
    #[serde(default)]
    pub law: Option<PathBuf>,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Robustness rows to run: "a".."e" and "none_satisfied".
    #[serde(default = "default_conditions")]
    pub conditions: Vec<String>,
    /// Coverage mode: corrupt every nuisance instead of fitting them.
    #[serde(default)]
    pub corrupted: bool,
    /// Emit SVG plots next to the reports.
    #[serde(default)]
    pub plots: bool,

    // ---- output ----
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_estimands() -> Vec<EstimandKind> {
    vec![
        EstimandKind::ThetaKPrime,
        EstimandKind::ThetaK,
        EstimandKind::ThetaAll,
    ]
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::OneStep, EstimatorKind::Tml]
}
fn default_folds() -> Vec<usize> {
    vec![5]
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_true() -> bool {
    true
}
fn default_trunc() -> f64 {
    0.01
}
fn default_label() -> String {
    String::from("0.5")
}
fn default_n_grid() -> Vec<usize> {
    vec![500, 2000]
}
fn default_reps() -> usize {
    50
}
fn default_conditions() -> Vec<String> {
    vec![
        "a".into(),
        "b".into(),
        "c".into(),
        "d".into(),
        "e".into(),
        "none_satisfied".into(),
    ]
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Command-line overrides of scalar config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub folds: Option<usize>,
    pub no_stabilize: bool,
    pub trunc: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("malformed config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(out) = &ov.out {
            self.out = out.clone();
        }
        if let Some(seeds) = &ov.seeds {
            self.seeds = seeds.clone();
        }
        if let Some(j) = ov.folds {
            self.folds = vec![j];
        }
        if ov.no_stabilize {
            self.stabilize = false;
        }
        if let Some(t) = ov.trunc {
            self.trunc = t;
        }
    }

    /// Cross-field validation that does not need the data file.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.estimands.is_empty() {
            return Err(CliError::Config("no estimands requested".into()));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Config("no estimators requested".into()));
        }
        if self.folds.is_empty() || self.folds.iter().any(|&j| j < 2) {
            return Err(CliError::Config("fold counts must all be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed required".into()));
        }
        if !(0.0..0.5).contains(&self.trunc) {
            return Err(CliError::Config(
                "truncation bound must lie in [0, 0.5)".into(),
            ));
        }
        if self.reps < 2 {
            return Err(CliError::Config("at least 2 replicates required".into()));
        }
        Ok(())
    }

    /// The nuisance configuration implied by the stack choice.
    pub fn nuisance(&self, outcome_family: Family) -> NuisanceConfig {
        let mut cfg = match self.stack {
            StackChoice::Full => NuisanceConfig::full(outcome_family),
            StackChoice::Glm => NuisanceConfig::glm(outcome_family),
            StackChoice::GlmSaturated => {
                let mut c = NuisanceConfig::glm(outcome_family);
                c.expansion = Expansion::Interactions;
                c
            }
        };
        cfg.trunc_bound = self.trunc;
        cfg
    }
}

/// Seed lists accept comma-separated values and inclusive `lo..hi` ranges,
/// e.g. `--seeds 1,2,10..12` means {1, 2, 10, 11, 12}.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad seed range start: {part}")))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad seed range end: {part}")))?;
            if hi < lo {
                return Err(CliError::Config(format!("empty seed range: {part}")));
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(
                part.parse()
                    .map_err(|_| CliError::Config(format!("bad seed: {part}")))?,
            );
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Config("empty seed list".into()));
    }
    Ok(seeds)
}
