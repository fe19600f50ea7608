//! Observed-data model: validated rectangular dataset, estimand
//! specification, cross-fitting fold assignment, and positivity diagnostics.

use crate::error::{Error, Result};
use crate::math;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Validated rectangular dataset `O_1..O_n` with `O = (Y, A, M, W)`.
///
/// Columns are immutable after construction and safe to share read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    /// Outcome column (binary {0,1} or real).
    pub y: Vec<f64>,
    /// Binary exposure column.
    pub a: Vec<f64>,
    /// Baseline confounder columns (categoricals already coded upstream).
    pub w: Vec<Vec<f64>>,
    /// Ordered mediator columns M_1..M_K.
    pub mediators: Vec<Vec<f64>>,
}

impl ObservationTable {
    /// Validates column lengths, completeness (no non-finite cells), and
    /// that the exposure takes exactly two values.
    pub fn new(
        y: Vec<f64>,
        a: Vec<f64>,
        w: Vec<Vec<f64>>,
        mediators: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Invalid("empty table".into()));
        }
        if mediators.is_empty() {
            return Err(Error::Invalid("at least one mediator column required".into()));
        }
        let check_col = |name: &str, idx: usize, col: &[f64]| -> Result<()> {
            if col.len() != n {
                return Err(Error::Invalid(format!(
                    "column {name}[{idx}] has {} rows, expected {n}",
                    col.len()
                )));
            }
            for (row, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Invalid(format!(
                        "missing or non-finite cell at row {row} in column {name}[{idx}]"
                    )));
                }
            }
            Ok(())
        };
        check_col("y", 0, &y)?;
        check_col("a", 0, &a)?;
        for (i, col) in w.iter().enumerate() {
            check_col("w", i, col)?;
        }
        for (i, col) in mediators.iter().enumerate() {
            check_col("m", i, col)?;
        }
        let mut levels: Vec<f64> = Vec::new();
        for &v in &a {
            if !levels.iter().any(|&l| l == v) {
                levels.push(v);
            }
        }
        if levels.len() != 2 {
            return Err(Error::Invalid(format!(
                "exposure must be binary; found {} distinct values",
                levels.len()
            )));
        }
        Ok(ObservationTable { y, a, w, mediators })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_mediators(&self) -> usize {
        self.mediators.len()
    }

    pub fn y_is_binary(&self) -> bool {
        is_binary(&self.y)
    }
}

pub fn is_binary(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Exposure coding for the two trial arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    /// Exposure value for the exposed strategy (a').
    pub a_prime: f64,
    /// Exposure value for the reference strategy (a*).
    pub a_star: f64,
}

impl ArmSpec {
    pub fn validate(&self, table: &ObservationTable) -> Result<()> {
        if self.a_prime == self.a_star {
            return Err(Error::Invalid("arm values must differ".into()));
        }
        let mut seen_prime = false;
        let mut seen_star = false;
        for &v in &table.a {
            if v == self.a_prime {
                seen_prime = true;
            } else if v == self.a_star {
                seen_star = true;
            } else {
                return Err(Error::Invalid(format!(
                    "exposure value {v} matches neither arm ({}, {})",
                    self.a_prime, self.a_star
                )));
            }
        }
        if !seen_prime || !seen_star {
            return Err(Error::Invalid("both arm values must appear in the data".into()));
        }
        Ok(())
    }
}

/// Partition of the mediators around the mediator of interest: causal
/// ancestors Z, the mediator M_k itself, and causal descendants L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorPartition {
    pub z_indices: Vec<usize>,
    pub k_index: usize,
    pub l_indices: Vec<usize>,
}

impl MediatorPartition {
    /// Checks pairwise disjointness and full coverage of 0..K.
    pub fn validate(&self, n_mediators: usize) -> Result<()> {
        let mut seen = alloc::vec![false; n_mediators];
        let mut mark = |i: usize| -> Result<()> {
            if i >= n_mediators {
                return Err(Error::Invalid(format!(
                    "mediator index {i} out of range (K = {n_mediators})"
                )));
            }
            if seen[i] {
                return Err(Error::Invalid(format!("mediator index {i} appears twice")));
            }
            seen[i] = true;
            Ok(())
        };
        for &i in &self.z_indices {
            mark(i)?;
        }
        mark(self.k_index)?;
        for &i in &self.l_indices {
            mark(i)?;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Invalid(
                "mediator partition must cover every mediator column".into(),
            ));
        }
        Ok(())
    }
}

/// The three target estimands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    /// Shift M_k, accounting for flow-on effects on descendants L.
    ThetaKPrime,
    /// Shift M_k without flow-on effects (L empty, Z = all other mediators).
    ThetaK,
    /// Shift the joint distribution of all mediators.
    ThetaAll,
}

impl EstimandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimandKind::ThetaKPrime => "theta_k_prime",
            EstimandKind::ThetaK => "theta_k",
            EstimandKind::ThetaAll => "theta_all",
        }
    }
}

/// A target estimand bound to an arm coding and (where needed) a mediator
/// partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub kind: EstimandKind,
    /// Required for `ThetaKPrime`; for `ThetaK` the `l_indices` must be
    /// empty; ignored for `ThetaAll`.
    pub partition: Option<MediatorPartition>,
    pub arms: ArmSpec,
}

impl EstimandSpec {
    pub fn theta_k_prime(partition: MediatorPartition, arms: ArmSpec) -> Self {
        EstimandSpec {
            kind: EstimandKind::ThetaKPrime,
            partition: Some(partition),
            arms,
        }
    }

    /// `ThetaK`: every mediator other than M_k is treated as an ancestor.
    pub fn theta_k(k_index: usize, n_mediators: usize, arms: ArmSpec) -> Self {
        let z_indices = (0..n_mediators).filter(|&i| i != k_index).collect();
        EstimandSpec {
            kind: EstimandKind::ThetaK,
            partition: Some(MediatorPartition {
                z_indices,
                k_index,
                l_indices: Vec::new(),
            }),
            arms,
        }
    }

    pub fn theta_all(arms: ArmSpec) -> Self {
        EstimandSpec {
            kind: EstimandKind::ThetaAll,
            partition: None,
            arms,
        }
    }

    /// Binds the estimand to a table, raising every validation error before
    /// estimation work begins.
    pub fn validate(&self, table: &ObservationTable) -> Result<()> {
        self.arms.validate(table)?;
        match self.kind {
            EstimandKind::ThetaAll => Ok(()),
            EstimandKind::ThetaKPrime | EstimandKind::ThetaK => {
                let part = self.partition.as_ref().ok_or_else(|| {
                    Error::Invalid("mediator partition required for this estimand".into())
                })?;
                part.validate(table.n_mediators())?;
                if self.kind == EstimandKind::ThetaK && !part.l_indices.is_empty() {
                    return Err(Error::Invalid(
                        "theta_k does not admit descendant mediators".into(),
                    ));
                }
                if !is_binary(&table.mediators[part.k_index]) {
                    return Err(Error::Invalid(format!(
                        "mediator of interest (column {}) must be binary for {}",
                        part.k_index,
                        self.kind.as_str()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Fold assignment for cross-fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub j: usize,
    /// Per-row fold label in 0..j.
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
    /// Non-fatal conditions encountered during assignment.
    pub warnings: Vec<String>,
}

impl CrossFitPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0usize; self.j];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Randomly partitions the rows into `j` approximately equal folds,
/// optionally stratified by a binary outcome. Deterministic given `seed`:
/// within each stratum the labels are a seeded shuffle of a balanced label
/// sequence.
pub fn partition_folds(
    table: &ObservationTable,
    j: usize,
    seed: u64,
    stratified: bool,
) -> Result<CrossFitPlan> {
    let n = table.n();
    if j < 2 {
        return Err(Error::Invalid("fold count must be at least 2".into()));
    }
    if j > n {
        return Err(Error::Invalid(format!("fold count {j} exceeds n = {n}")));
    }
    if n < 2 * j {
        return Err(Error::Invalid(format!("n = {n} is below 2*J = {}", 2 * j)));
    }
    if stratified && !table.y_is_binary() {
        return Err(Error::Invalid(
            "stratified fold assignment requires a binary outcome".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = alloc::vec![0usize; n];
    let mut warnings = Vec::new();

    let strata: Vec<Vec<usize>> = if stratified {
        let zeros = (0..n).filter(|&i| table.y[i] == 0.0).collect();
        let ones = (0..n).filter(|&i| table.y[i] == 1.0).collect();
        alloc::vec![zeros, ones]
    } else {
        alloc::vec![(0..n).collect()]
    };

    for rows in strata.iter().filter(|r| !r.is_empty()) {
        let mut labels: Vec<usize> = (0..rows.len()).map(|i| i % j).collect();
        if rows.len() < j {
            warnings.push(format!(
                "stratum of size {} is smaller than J = {j}; assigning round-robin",
                rows.len()
            ));
        } else {
            labels.shuffle(&mut rng);
        }
        for (&row, &label) in rows.iter().zip(labels.iter()) {
            assignments[row] = label;
        }
    }

    Ok(CrossFitPlan {
        j,
        assignments,
        seed,
        stratified,
        warnings,
    })
}

/// Default stratification policy: on only when the outcome is binary with
/// minority prevalence below 0.2.
pub fn default_stratified(table: &ObservationTable) -> bool {
    if !table.y_is_binary() {
        return false;
    }
    let prev = math::mean(&table.y);
    prev.min(1.0 - prev) < 0.2
}

/// Positivity diagnostic: minima of the estimated propensity and mediator
/// densities before truncation, and how many predictions were clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    /// Minimum estimated g(a'|w) and g(a*|w) over rows, pre-clip.
    pub min_g: f64,
    /// Minimum estimated r(m_k|a',z,w) over rows, pre-clip.
    pub min_r: f64,
    /// Configured truncation bound epsilon.
    pub trunc_bound: f64,
    /// Count of predictions clipped to [epsilon, 1-epsilon].
    pub n_truncated: usize,
}

impl PositivityReport {
    /// Builds a report from raw (pre-clip) probability predictions.
    pub fn from_raw(g_vals: &[f64], r_vals: &[f64], trunc_bound: f64) -> Self {
        let min_of = |vals: &[f64]| vals.iter().copied().fold(1.0f64, f64::min);
        let clipped = |vals: &[f64]| {
            vals.iter()
                .filter(|&&v| v < trunc_bound || v > 1.0 - trunc_bound)
                .count()
        };
        PositivityReport {
            min_g: min_of(g_vals),
            min_r: min_of(r_vals),
            trunc_bound,
            n_truncated: clipped(g_vals) + clipped(r_vals),
        }
    }
}

/// Default truncation bound for probability-valued nuisance predictions.
pub const DEFAULT_TRUNC_BOUND: f64 = 0.01;
