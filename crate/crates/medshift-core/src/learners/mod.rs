//! Regression/classification primitives and the cross-validated
//! convex-weight super learner used to fit every nuisance function.
//!
//! Candidates: intercept-only, GLM (IRLS), ridge and lasso (cyclic
//! coordinate descent on the penalized weighted objective), and greedy
//! depth-1 gradient boosting on the family deviance. All fits are
//! deterministic given the data and spec.

mod coord;
mod glm;
mod stack;
mod stumps;

pub use stack::{
    fit_super_learner, inner_fold_labels, EnsembleWeights, Loss, StackConfig, SuperLearnerFit,
};

use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Outcome family, determining link and deviance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Binomial,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    InterceptOnly,
    Glm,
    Ridge,
    Lasso,
    BoostedStumps,
}

/// Hyperparameters; unused entries are ignored by kinds that do not need
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Penalty for ridge/lasso.
    pub lambda: f64,
    /// Boosting rounds.
    pub rounds: usize,
    /// Boosting shrinkage.
    pub learning_rate: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lambda: 0.0,
            rounds: 50,
            learning_rate: 0.1,
            max_iter: 100,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    pub kind: LearnerKind,
    #[serde(default)]
    pub hyper: Hyper,
}

impl LearnerSpec {
    pub fn new(family: Family, kind: LearnerKind) -> Self {
        LearnerSpec {
            family,
            kind,
            hyper: Hyper::default(),
        }
    }

    pub fn with_family(&self, family: Family) -> Self {
        LearnerSpec {
            family,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hyper.lambda < 0.0 {
            return Err(Error::Invalid("penalty lambda must be nonnegative".into()));
        }
        if self.hyper.rounds < 1 {
            return Err(Error::Invalid("boosting rounds must be at least 1".into()));
        }
        if self.hyper.tol <= 0.0 {
            return Err(Error::Invalid("convergence tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// A decision stump: predicts `left` where `x[feature] <= threshold`,
/// otherwise `right`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelInner {
    /// Constant prediction on the response scale.
    Constant(f64),
    /// Intercept and slope coefficients on the link scale.
    Linear { intercept: f64, coefs: Vec<f64> },
    /// Initial link-scale value plus shrunken stumps.
    Boosted {
        init: f64,
        shrinkage: f64,
        stumps: Vec<Stump>,
    },
}

/// An immutable fitted model; prediction is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub inner: ModelInner,
    pub converged: bool,
    pub iterations: usize,
    /// Set when a singular unpenalized design forced a ridge fallback.
    pub ridge_fallback: bool,
}

impl FittedModel {
    /// Prediction on the response scale (probability for binomial).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let eta = match &self.inner {
            ModelInner::Constant(c) => return *c,
            ModelInner::Linear { intercept, coefs } => {
                let mut eta = *intercept;
                for (j, &b) in coefs.iter().enumerate() {
                    eta += b * row[j];
                }
                eta
            }
            ModelInner::Boosted {
                init,
                shrinkage,
                stumps,
            } => {
                let mut eta = *init;
                for s in stumps {
                    let leaf = if row[s.feature] <= s.threshold {
                        s.left
                    } else {
                        s.right
                    };
                    eta += shrinkage * leaf;
                }
                eta
            }
        };
        match self.spec.family {
            Family::Binomial => math::expit(eta),
            Family::Gaussian => eta,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Fits a single candidate learner. `x` carries the slope columns only (no
/// intercept column); every kind handles the intercept itself, unpenalized.
pub fn fit_learner(
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<FittedModel> {
    spec.validate()?;
    let n = x.rows;
    if n == 0 || y.len() != n {
        return Err(Error::Invalid("design matrix and response length mismatch".into()));
    }
    if spec.family == Family::Binomial && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Invalid("binomial response must lie in [0,1]".into()));
    }
    let w_store;
    let w: &[f64] = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Invalid("row weight length mismatch".into()));
            }
            w
        }
        None => {
            w_store = alloc::vec![1.0; n];
            &w_store
        }
    };

    match spec.kind {
        LearnerKind::InterceptOnly => Ok(glm::fit_intercept_only(spec, y, w)),
        LearnerKind::Glm => glm::fit_glm(spec, x, y, w),
        LearnerKind::Ridge | LearnerKind::Lasso => coord::fit_penalized(spec, x, y, w),
        LearnerKind::BoostedStumps => Ok(stumps::fit_boosted_stumps(spec, x, y, w)),
    }
}

/// Largest lasso penalty with any nonzero slope on centered data:
/// `max_j |sum_i w_i x_ij (y_i - ybar_w)| / sum_i w_i`.
pub fn lasso_lambda_max(x: &Matrix, y: &[f64], w: &[f64]) -> f64 {
    let wsum = math::sum(w);
    let mut acc = math::KahanSum::new();
    for i in 0..y.len() {
        acc.add(w[i] * y[i]);
    }
    let ybar = acc.value() / wsum;
    let mut best = 0.0f64;
    for j in 0..x.cols {
        let mut s = math::KahanSum::new();
        for i in 0..x.rows {
            s.add(w[i] * x.get(i, j) * (y[i] - ybar));
        }
        best = best.max(math::abs(s.value()) / wsum);
    }
    best
}
