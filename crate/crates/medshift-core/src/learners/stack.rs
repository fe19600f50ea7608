//! Cross-validated convex-weight super learner. Candidate fits are scored
//! on out-of-fold predictions, the weight vector is chosen on the simplex
//! by projected gradient descent, and the winning weights are applied to
//! full-data refits of each candidate.
//!
//! Inner folds are assigned against the sorted original row indices, so
//! the ensemble is invariant (up to floating-point roundoff) to the order
//! in which rows are presented.

use super::{fit_learner, Family, FittedModel, LearnerKind, LearnerSpec, ModelInner};
use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Configuration of the ensemble: the candidate library and the number of
/// inner cross-validation folds used to score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub candidates: Vec<LearnerSpec>,
    pub inner_folds: usize,
}

impl StackConfig {
    /// The default library: intercept-only, GLM, ridge, lasso, and boosted
    /// stumps, all sharing the given family.
    pub fn full_library(family: Family) -> Self {
        let kinds = [
            LearnerKind::InterceptOnly,
            LearnerKind::Glm,
            LearnerKind::Ridge,
            LearnerKind::Lasso,
            LearnerKind::BoostedStumps,
        ];
        let candidates = kinds
            .iter()
            .map(|&k| {
                let mut spec = LearnerSpec::new(family, k);
                if matches!(k, LearnerKind::Ridge | LearnerKind::Lasso) {
                    spec.hyper.lambda = 0.01;
                }
                spec
            })
            .collect();
        StackConfig {
            candidates,
            inner_folds: 5,
        }
    }

    /// A single-GLM "library"; cross-validation is skipped entirely.
    pub fn glm_only(family: Family) -> Self {
        StackConfig {
            candidates: alloc::vec![LearnerSpec::new(family, LearnerKind::Glm)],
            inner_folds: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Invalid("super learner needs at least one candidate".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::Invalid("inner cross-validation needs at least 2 folds".into()));
        }
        let family = self.candidates[0].family;
        for c in &self.candidates {
            c.validate()?;
            if c.family != family {
                return Err(Error::Invalid("all candidates must share one family".into()));
            }
        }
        Ok(())
    }
}

/// Loss used to score out-of-fold predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    NegLogLikelihood,
    SquaredError,
}

impl Loss {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Binomial => Loss::NegLogLikelihood,
            Family::Gaussian => Loss::SquaredError,
        }
    }
}

/// The chosen convex weights together with the risks that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub weights: Vec<f64>,
    pub cv_risk: f64,
    pub per_candidate_risk: Vec<f64>,
}

/// A fitted ensemble: full-data candidate refits plus their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperLearnerFit {
    pub models: Vec<FittedModel>,
    pub weights: EnsembleWeights,
    pub family: Family,
}

impl SuperLearnerFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut p = 0.0;
        for (m, &a) in self.models.iter().zip(&self.weights.weights) {
            if a != 0.0 {
                p += a * m.predict_row(row);
            }
        }
        match self.family {
            Family::Binomial => math::clamp(p, 0.0, 1.0),
            Family::Gaussian => p,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Assigns each row an inner fold label in `0..j`. `keys` are stable row
/// identifiers (original data-set indices); labelling is a function of the
/// sorted key set, the fold count, and the seed only.
pub fn inner_fold_labels(keys: &[usize], j: usize, seed: u64) -> Result<Vec<usize>> {
    let n = keys.len();
    if j < 2 {
        return Err(Error::Invalid("inner cross-validation needs at least 2 folds".into()));
    }
    if n < j {
        return Err(Error::Invalid("fewer rows than inner folds".into()));
    }
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by_key(|&i| keys[i]);
    let mut labels_by_rank: Vec<usize> = (0..n).map(|i| i % j).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels_by_rank.shuffle(&mut rng);
    let mut labels = alloc::vec![0usize; n];
    for (r, &i) in rank.iter().enumerate() {
        labels[i] = labels_by_rank[r];
    }
    Ok(labels)
}

/// Fits the super learner. `keys` are the stable per-row identifiers used
/// for fold assignment and for the order of risk accumulation.
pub fn fit_super_learner(
    config: &StackConfig,
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    keys: &[usize],
    seed: u64,
) -> Result<SuperLearnerFit> {
    config.validate()?;
    let n = x.rows;
    if y.len() != n || keys.len() != n {
        return Err(Error::Invalid("response/key length mismatch".into()));
    }
    if n == 0 {
        return Err(Error::Invalid("cannot fit on an empty data set".into()));
    }
    let family = config.candidates[0].family;
    let w_store;
    let w: &[f64] = match weights {
        Some(w) => w,
        None => {
            w_store = alloc::vec![1.0; n];
            &w_store
        }
    };

    // Degenerate response: every candidate would predict the same constant.
    if y.iter().all(|&v| v == y[0]) {
        let model = FittedModel {
            spec: config.candidates[0].clone(),
            inner: ModelInner::Constant(y[0]),
            converged: true,
            iterations: 0,
            ridge_fallback: false,
        };
        return Ok(SuperLearnerFit {
            models: alloc::vec![model],
            weights: EnsembleWeights {
                weights: alloc::vec![1.0],
                cv_risk: 0.0,
                per_candidate_risk: alloc::vec![0.0],
            },
            family,
        });
    }

    // A single candidate needs no cross-validation.
    if config.candidates.len() == 1 {
        let model = fit_learner(&config.candidates[0], x, y, Some(w))?;
        let loss = Loss::for_family(family);
        let preds = model.predict(x);
        let risk = risk_in_key_order(loss, &preds, y, w, keys);
        return Ok(SuperLearnerFit {
            models: alloc::vec![model],
            weights: EnsembleWeights {
                weights: alloc::vec![1.0],
                cv_risk: risk,
                per_candidate_risk: alloc::vec![risk],
            },
            family,
        });
    }

    let loss = Loss::for_family(family);
    let labels = inner_fold_labels(keys, config.inner_folds, seed)?;

    // Row visit order sorted by key, so sums do not depend on presentation
    // order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| keys[i]);

    let k = config.candidates.len();
    let mut oof = Matrix::zeros(n, k);
    let mut usable = alloc::vec![true; k];
    for fold in 0..config.inner_folds {
        let train: Vec<usize> = order.iter().copied().filter(|&i| labels[i] != fold).collect();
        let test: Vec<usize> = order.iter().copied().filter(|&i| labels[i] == fold).collect();
        let xt = x.take_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Vec<f64> = train.iter().map(|&i| w[i]).collect();
        for (c, spec) in config.candidates.iter().enumerate() {
            if !usable[c] {
                continue;
            }
            match fit_learner(spec, &xt, &yt, Some(&wt)) {
                Ok(m) => {
                    for &i in &test {
                        oof.set(i, c, m.predict_row(x.row(i)));
                    }
                }
                Err(_) => usable[c] = false,
            }
        }
    }
    if !usable.iter().any(|&u| u) {
        return Err(Error::Estimation("every super learner candidate failed to fit".into()));
    }

    let per_candidate_risk: Vec<f64> = (0..k)
        .map(|c| {
            if usable[c] {
                let col: Vec<f64> = (0..n).map(|i| oof.get(i, c)).collect();
                risk_in_key_order(loss, &col, y, w, keys)
            } else {
                f64::INFINITY
            }
        })
        .collect();

    let alpha = optimize_simplex(loss, &oof, y, w, keys, &usable, &per_candidate_risk);
    let ens: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|c| alpha[c] * oof.get(i, c)).sum())
        .collect();
    let cv_risk = risk_in_key_order(loss, &ens, y, w, keys);

    let mut models = Vec::with_capacity(k);
    for (c, spec) in config.candidates.iter().enumerate() {
        if alpha[c] > 0.0 {
            models.push(fit_learner(spec, x, y, Some(w))?);
        } else {
            // Placeholder keeping indices aligned; never consulted because
            // its weight is exactly zero.
            models.push(FittedModel {
                spec: spec.clone(),
                inner: ModelInner::Constant(0.0),
                converged: true,
                iterations: 0,
                ridge_fallback: false,
            });
        }
    }

    Ok(SuperLearnerFit {
        models,
        weights: EnsembleWeights {
            weights: alpha,
            cv_risk,
            per_candidate_risk,
        },
        family,
    })
}

/// Weighted mean loss, accumulated over rows in ascending-key order.
fn risk_in_key_order(loss: Loss, pred: &[f64], y: &[f64], w: &[f64], keys: &[usize]) -> f64 {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| keys[i]);
    let mut num = math::KahanSum::new();
    let mut den = math::KahanSum::new();
    for &i in &order {
        num.add(w[i] * row_loss(loss, pred[i], y[i]));
        den.add(w[i]);
    }
    num.value() / den.value()
}

fn row_loss(loss: Loss, p: f64, y: f64) -> f64 {
    match loss {
        Loss::SquaredError => (y - p) * (y - p),
        Loss::NegLogLikelihood => {
            let p = math::clamp(p, 1e-10, 1.0 - 1e-10);
            -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p))
        }
    }
}

/// Projected gradient descent on the probability simplex, restricted to
/// usable candidates, with a best-single-candidate safeguard.
fn optimize_simplex(
    loss: Loss,
    oof: &Matrix,
    y: &[f64],
    w: &[f64],
    keys: &[usize],
    usable: &[bool],
    per_candidate_risk: &[f64],
) -> Vec<f64> {
    let k = oof.cols;
    let n = oof.rows;
    let n_usable = usable.iter().filter(|&&u| u).count();
    let mut alpha: Vec<f64> = usable
        .iter()
        .map(|&u| if u { 1.0 / n_usable as f64 } else { 0.0 })
        .collect();

    let ens_risk = |a: &[f64]| -> f64 {
        let pred: Vec<f64> = (0..n)
            .map(|i| (0..k).map(|c| a[c] * oof.get(i, c)).sum())
            .collect();
        risk_in_key_order(loss, &pred, y, w, keys)
    };

    let mut risk = ens_risk(&alpha);
    let mut step = 1.0;
    for _ in 0..1000 {
        // Gradient of the mean loss with respect to the weights.
        let mut grad = alloc::vec![0.0; k];
        let wsum = math::sum(w);
        for i in 0..n {
            let p: f64 = (0..k).map(|c| alpha[c] * oof.get(i, c)).sum();
            let dl = match loss {
                Loss::SquaredError => 2.0 * (p - y[i]),
                Loss::NegLogLikelihood => {
                    let pc = math::clamp(p, 1e-10, 1.0 - 1e-10);
                    (pc - y[i]) / (pc * (1.0 - pc))
                }
            };
            for c in 0..k {
                if usable[c] {
                    grad[c] += w[i] * dl * oof.get(i, c) / wsum;
                }
            }
        }
        // Backtracking line search on the projected step.
        let mut improved = false;
        for _ in 0..40 {
            let trial_raw: Vec<f64> = (0..k)
                .map(|c| if usable[c] { alpha[c] - step * grad[c] } else { f64::NEG_INFINITY })
                .collect();
            let trial = project_simplex(&trial_raw, usable);
            let trial_risk = ens_risk(&trial);
            if trial_risk < risk - 1e-16 {
                let delta = risk - trial_risk;
                alpha = trial;
                risk = trial_risk;
                improved = true;
                if delta < 1e-8 {
                    return safeguard(alpha, risk, usable, per_candidate_risk, k);
                }
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        if !improved {
            break;
        }
        step *= 2.0;
    }
    safeguard(alpha, risk, usable, per_candidate_risk, k)
}

/// Falls back to the best single candidate when the optimizer came out
/// worse than a vertex of the simplex.
fn safeguard(
    alpha: Vec<f64>,
    risk: f64,
    usable: &[bool],
    per_candidate_risk: &[f64],
    k: usize,
) -> Vec<f64> {
    let mut best = 0;
    for c in 1..k {
        if per_candidate_risk[c] < per_candidate_risk[best] {
            best = c;
        }
    }
    if usable[best] && per_candidate_risk[best] < risk - 1e-12 {
        let mut vertex = alloc::vec![0.0; k];
        vertex[best] = 1.0;
        return vertex;
    }
    alpha
}

/// Euclidean projection onto the simplex over the usable coordinates.
fn project_simplex(v: &[f64], usable: &[bool]) -> Vec<f64> {
    let mut vals: Vec<f64> = v
        .iter()
        .zip(usable)
        .filter(|(_, &u)| u)
        .map(|(&x, _)| x)
        .collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &val) in vals.iter().enumerate() {
        cum += val;
        let t = (cum - 1.0) / (j + 1) as f64;
        if val - t > 0.0 {
            theta = t;
        }
    }
    v.iter()
        .zip(usable)
        .map(|(&x, &u)| if u { (x - theta).max(0.0) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data(n: usize) -> (Matrix, Vec<f64>, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| alloc::vec![(i % 5) as f64, ((i * 3) % 7) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 + 0.5 * r[0] - 0.25 * r[1]).collect();
        let keys: Vec<usize> = (0..n).collect();
        (Matrix::from_rows(rows), y, keys)
    }

    #[test]
    fn inner_folds_balanced_and_key_invariant() {
        let keys: Vec<usize> = (0..97).collect();
        let labels = inner_fold_labels(&keys, 5, 42).unwrap();
        let mut counts = [0usize; 5];
        for &l in &labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 19 || c == 20));
        // Permuting the rows permutes the labels identically.
        let perm: Vec<usize> = (0..97).rev().collect();
        let labels_perm = inner_fold_labels(&perm, 5, 42).unwrap();
        for i in 0..97 {
            assert_eq!(labels[perm[i]], labels_perm[i]);
        }
    }

    #[test]
    fn exact_linear_truth_puts_weight_on_glm() {
        let (x, y, keys) = linear_data(120);
        let config = StackConfig::full_library(Family::Gaussian);
        let fit = fit_super_learner(&config, &x, &y, None, &keys, 7).unwrap();
        // The noiseless linear signal is recovered essentially exactly.
        for i in 0..x.rows {
            assert!((fit.predict_row(x.row(i)) - y[i]).abs() < 1e-4);
        }
        let min_cand = fit
            .weights
            .per_candidate_risk
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(fit.weights.cv_risk <= min_cand + 1e-10);
    }

    #[test]
    fn single_candidate_skips_cv() {
        let (x, y, keys) = linear_data(40);
        let config = StackConfig::glm_only(Family::Gaussian);
        let fit = fit_super_learner(&config, &x, &y, None, &keys, 1).unwrap();
        assert_eq!(fit.weights.weights, alloc::vec![1.0]);
        assert!((fit.predict_row(x.row(3)) - y[3]).abs() < 1e-8);
    }

    #[test]
    fn constant_response_yields_constant_fit() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| alloc::vec![i as f64]).collect();
        let x = Matrix::from_rows(rows);
        let y = alloc::vec![1.0; 20];
        let keys: Vec<usize> = (0..20).collect();
        let config = StackConfig::full_library(Family::Binomial);
        let fit = fit_super_learner(&config, &x, &y, None, &keys, 3).unwrap();
        assert_eq!(fit.predict_row(&[5.0]), 1.0);
    }

    #[test]
    fn permutation_invariant_weights() {
        let (x, y, keys) = linear_data(60);
        let config = StackConfig::full_library(Family::Gaussian);
        let fit = fit_super_learner(&config, &x, &y, None, &keys, 11).unwrap();

        let perm: Vec<usize> = (0..60).rev().collect();
        let xp = x.take_rows(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let kp: Vec<usize> = perm.iter().map(|&i| keys[i]).collect();
        let fit_p = fit_super_learner(&config, &xp, &yp, None, &kp, 11).unwrap();
        for (a, b) in fit.weights.weights.iter().zip(&fit_p.weights.weights) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
