//! Generalized linear models: gaussian weighted least squares and binomial
//! logistic regression fitted by iteratively reweighted least squares.

use super::{Family, FittedModel, LearnerSpec, ModelInner};
use crate::error::Result;
use crate::math::{self, Matrix};
use alloc::vec::Vec;

const RIDGE_FALLBACK_LAMBDA: f64 = 1e-6;
// Coefficients beyond this magnitude on the logit scale indicate
// separation; the fit is returned unconverged.
const MAX_ABS_COEF: f64 = 100.0;

pub fn fit_intercept_only(spec: &LearnerSpec, y: &[f64], w: &[f64]) -> FittedModel {
    let wsum = math::sum(w);
    let mut acc = math::KahanSum::new();
    for i in 0..y.len() {
        acc.add(w[i] * y[i]);
    }
    let mean = acc.value() / wsum;
    FittedModel {
        spec: spec.clone(),
        inner: ModelInner::Constant(mean),
        converged: true,
        iterations: 1,
        ridge_fallback: false,
    }
}

/// Solves the (possibly ridge-stabilized) weighted normal equations.
/// `lambda` penalizes slopes only, never the intercept.
fn solve_wls(
    x: &Matrix,
    z: &[f64],
    v: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let p = x.cols + 1;
    let aug = augment(x);
    let (mut a, mut b) = math::normal_equations(&aug, z, v);
    for j in 1..p {
        a[j * p + j] += lambda;
    }
    let beta = math::cholesky_solve(&mut a, &mut b, p, 1e-10)?;
    Ok((beta[0], beta[1..].to_vec()))
}

fn augment(x: &Matrix) -> Matrix {
    let mut aug = Matrix::zeros(x.rows, x.cols + 1);
    for i in 0..x.rows {
        aug.set(i, 0, 1.0);
        for j in 0..x.cols {
            aug.set(i, j + 1, x.get(i, j));
        }
    }
    aug
}

pub fn fit_glm(spec: &LearnerSpec, x: &Matrix, y: &[f64], w: &[f64]) -> Result<FittedModel> {
    match spec.family {
        Family::Gaussian => fit_gaussian(spec, x, y, w, 0.0),
        Family::Binomial => fit_logistic(spec, x, y, w, 0.0),
    }
}

pub fn fit_gaussian(
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<FittedModel> {
    let (result, fallback) = match solve_wls(x, y, w, lambda) {
        Ok(r) => (r, false),
        Err(_) if lambda == 0.0 => (solve_wls(x, y, w, RIDGE_FALLBACK_LAMBDA)?, true),
        Err(e) => return Err(e),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        inner: ModelInner::Linear {
            intercept: result.0,
            coefs: result.1,
        },
        converged: true,
        iterations: 1,
        ridge_fallback: fallback,
    })
}

pub fn fit_logistic(
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<FittedModel> {
    let n = x.rows;
    let mut intercept = 0.0f64;
    let mut coefs = alloc::vec![0.0f64; x.cols];
    let mut converged = false;
    let mut fallback = false;
    let mut iter = 0;
    let mut z = alloc::vec![0.0f64; n];
    let mut v = alloc::vec![0.0f64; n];
    while iter < spec.hyper.max_iter {
        iter += 1;
        for i in 0..n {
            let row = x.row(i);
            let mut eta = intercept;
            for (j, &b) in coefs.iter().enumerate() {
                eta += b * row[j];
            }
            let p = math::clamp(math::expit(eta), 1e-10, 1.0 - 1e-10);
            let var = p * (1.0 - p);
            v[i] = w[i] * var;
            z[i] = eta + (y[i] - p) / var;
        }
        let lam = if fallback { RIDGE_FALLBACK_LAMBDA } else { lambda };
        let (new_int, new_coefs) = match solve_wls(x, &z, &v, lam) {
            Ok(r) => r,
            Err(_) if lambda == 0.0 && !fallback => {
                fallback = true;
                solve_wls(x, &z, &v, RIDGE_FALLBACK_LAMBDA)?
            }
            Err(e) => return Err(e),
        };
        let mut delta = math::abs(new_int - intercept);
        for j in 0..coefs.len() {
            delta = delta.max(math::abs(new_coefs[j] - coefs[j]));
        }
        intercept = new_int;
        coefs = new_coefs;
        let mut max_coef = math::abs(intercept);
        for &c in &coefs {
            max_coef = max_coef.max(math::abs(c));
        }
        if max_coef > MAX_ABS_COEF {
            break; // separation: report non-convergence, caller decides
        }
        if delta < spec.hyper.tol {
            converged = true;
            break;
        }
    }
    Ok(FittedModel {
        spec: spec.clone(),
        inner: ModelInner::Linear { intercept, coefs },
        converged,
        iterations: iter,
        ridge_fallback: fallback,
    })
}
