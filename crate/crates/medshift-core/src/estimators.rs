//! Cross-fitted one-step and targeted minimum-loss estimators, total-effect
//! estimation, indirect-effect assembly, Wald inference, and multi-seed
//! replication.
//!
//! The one-step estimator is the sample mean of the uncentered efficient
//! influence function built from cross-fitted nuisances. The targeted
//! estimator iteratively tilts the outcome regression and the shifted
//! mediator density along offset-logistic fluctuation submodels until the
//! targeted score components average to (numerical) zero, recomputing the
//! repeated regressions after each tilt so the clever covariates track the
//! updated fits. Fluctuations are pooled: one coefficient per iteration,
//! fitted on the full sample from cross-fitted predictions.

use crate::data::{
    default_stratified, partition_folds, ArmSpec, CrossFitPlan, EstimandKind, EstimandSpec,
    ObservationTable, PositivityReport,
};
use crate::eif::{eif_components, EifTable, StabilizationFactors};
use crate::error::{Error, Result};
use crate::math::{self, KahanSum};
use crate::nuisance::{
    base_columns, build_design, crossfit_column, downstream_theta_k, fit_nuisances, mix_seed,
    prob_at, train, u_astar_column, FoldEvals, NuisanceConfig, NuisanceSet, VarSel,
};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// 97.5% standard-normal quantile used for 95% Wald intervals.
pub const WALD_Z: f64 = 1.959964;

/// Maximum targeted-update iterations.
pub const TML_MAX_ITER: usize = 20;

/// Floor for the targeted-update stopping tolerance.
pub const TML_TOL_FLOOR: f64 = 1e-8;

/// Bound keeping probabilities away from 0/1 before a logit transform.
const LOGIT_GUARD: f64 = 1e-9;

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    OneStep,
    Tml,
}

impl EstimatorKind {
    /// Label used in result tables.
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::OneStep => "One-step",
            EstimatorKind::Tml => "TML",
        }
    }
}

/// Record of the targeted-update loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmlFluctuation {
    /// Per-iteration fluctuation coefficient for the outcome tilt.
    pub eps_y: Vec<f64>,
    /// Per-iteration fluctuation coefficient for the mediator tilt.
    pub eps_mk: Vec<f64>,
    pub iterations: usize,
    /// Final targeted score means.
    pub score_y: f64,
    pub score_mk: f64,
    pub tol: f64,
}

/// Run diagnostics attached to every estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub positivity: PositivityReport,
    pub factors: StabilizationFactors,
    pub tml: Option<TmlFluctuation>,
    pub warnings: Vec<String>,
    /// For a binary outcome, whether the reported point estimate fell
    /// outside [0, 1] (reported anyway, flagged here).
    pub theta_outside_unit: bool,
}

/// Point estimate, standard error, Wald interval, and diagnostics for θ,
/// plus the interventional indirect effect once assembled against a
/// total-effect estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub kind: EstimandKind,
    pub estimator: EstimatorKind,
    pub theta_hat: f64,
    pub se_theta: f64,
    pub ci_theta_low: f64,
    pub ci_theta_high: f64,
    /// IIE block, filled by [`assemble_iie`].
    pub iie_hat: Option<f64>,
    pub se_iie: Option<f64>,
    pub ci_iie_low: Option<f64>,
    pub ci_iie_high: Option<f64>,
    pub n: usize,
    pub j: usize,
    pub seed: u64,
    pub converged: bool,
    pub diagnostics: Diagnostics,
    /// Per-row influence function of θ̂, centered at the estimate.
    pub eif_theta: Vec<f64>,
    /// Component table of the influence function (absent on aggregates).
    pub components: Option<EifTable>,
}

/// Everything needed to run the full pipeline once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub estimand: EstimandSpec,
    pub estimator: EstimatorKind,
    pub folds: usize,
    pub seed: u64,
    /// `None` applies the automatic policy (stratify rare binary outcomes).
    pub stratified: Option<bool>,
    /// Weight stabilization for the one-step estimator; ignored by the
    /// targeted estimator, whose tilting handles weight pathology.
    pub stabilize: bool,
    pub nuisance: NuisanceConfig,
}

/// Total-effect estimate E(Y_{a'}) with its per-row influence function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalEffect {
    pub estimate: f64,
    pub se: f64,
    /// Centered per-row influence function.
    pub eif: Vec<f64>,
}

/// Aggregate over seeds plus the per-seed results and exclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub aggregate: EstimateResult,
    pub per_seed: Vec<EstimateResult>,
    /// (seed, reason) for every excluded replicate.
    pub excluded: Vec<(u64, String)>,
    /// Between-seed standard deviation of the kept θ̂ points.
    pub between_seed_sd_theta: f64,
}

/// 95% Wald interval.
pub fn wald_ci(point: f64, se: f64) -> (f64, f64) {
    (point - WALD_Z * se, point + WALD_Z * se)
}

/// Maximizes the offset-logistic likelihood in its single coefficient:
/// `logit p_i = offset_i + eps * h_i`, outcomes in [0, 1]. Newton iteration
/// from zero with step halving; a degenerate information matrix returns 0.
pub fn offset_logistic(y: &[f64], h: &[f64], offset: &[f64]) -> Result<f64> {
    if y.len() != h.len() || y.len() != offset.len() {
        return Err(Error::Invalid("offset logistic: length mismatch".into()));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let loglik = |eps: f64| -> f64 {
        let mut acc = KahanSum::new();
        for i in 0..y.len() {
            let eta = offset[i] + eps * h[i];
            // log(1 + exp(eta)) computed stably.
            let log1pe = if eta > 0.0 {
                eta + math::ln(1.0 + math::exp(-eta))
            } else {
                math::ln(1.0 + math::exp(eta))
            };
            acc.add(y[i] * eta - log1pe);
        }
        acc.value()
    };
    let mut eps = 0.0f64;
    let mut ll = loglik(eps);
    for _ in 0..60 {
        let mut score = KahanSum::new();
        let mut info = KahanSum::new();
        for i in 0..y.len() {
            let p = math::expit(offset[i] + eps * h[i]);
            score.add(h[i] * (y[i] - p));
            info.add(h[i] * h[i] * p * (1.0 - p));
        }
        let info = info.value();
        if info < 1e-12 {
            break;
        }
        let mut step = score.value() / info;
        if math::abs(step) < 1e-12 {
            break;
        }
        step = math::clamp(step, -4.0, 4.0);
        // Step halving keeps the likelihood non-decreasing.
        let mut accepted = false;
        for _ in 0..30 {
            let cand = eps + step;
            let ll_cand = loglik(cand);
            if ll_cand >= ll - 1e-14 {
                eps = cand;
                ll = ll_cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(eps)
}

fn logit_guarded(p: f64) -> f64 {
    math::logit(math::clamp(p, LOGIT_GUARD, 1.0 - LOGIT_GUARD))
}

/// Stopping tolerance for the targeted scores.
fn tml_tol(se: f64, n: usize) -> f64 {
    let t = se / (math::sqrt(n as f64) * math::ln(n as f64));
    if t > TML_TOL_FLOOR {
        t
    } else {
        TML_TOL_FLOOR
    }
}

/// Both arms must carry at least two rows.
fn check_arm_counts(table: &ObservationTable, arms: &ArmSpec) -> Result<()> {
    let n_prime = table.a.iter().filter(|&&a| a == arms.a_prime).count();
    let n_star = table.n() - n_prime;
    if n_prime < 2 || n_star < 2 {
        return Err(Error::Estimation(alloc::format!(
            "each arm needs at least 2 rows (got {n_prime} exposed, {n_star} reference)"
        )));
    }
    Ok(())
}

fn check_finite_eif(totals: &[f64]) -> Result<()> {
    for (i, &v) in totals.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Estimation(alloc::format!(
                "non-finite influence function entry at row {i}"
            )));
        }
    }
    Ok(())
}

fn constant_outcome(table: &ObservationTable) -> Option<f64> {
    let c = table.y[0];
    if table.y.iter().all(|&v| v == c) {
        Some(c)
    } else {
        None
    }
}

/// A degenerate exact result for a constant outcome: every estimand equals
/// the constant and the influence function vanishes.
fn constant_result(
    table: &ObservationTable,
    spec: &EstimandSpec,
    estimator: EstimatorKind,
    plan: &CrossFitPlan,
    c: f64,
) -> EstimateResult {
    let n = table.n();
    EstimateResult {
        kind: spec.kind,
        estimator,
        theta_hat: c,
        se_theta: 0.0,
        ci_theta_low: c,
        ci_theta_high: c,
        iie_hat: None,
        se_iie: None,
        ci_iie_low: None,
        ci_iie_high: None,
        n,
        j: plan.j,
        seed: plan.seed,
        converged: true,
        diagnostics: Diagnostics {
            positivity: PositivityReport {
                min_g: 1.0,
                min_r: 1.0,
                trunc_bound: 0.0,
                n_truncated: 0,
            },
            factors: StabilizationFactors::unit(),
            tml: None,
            warnings: alloc::vec!["constant outcome: estimate is exact".into()],
            theta_outside_unit: false,
        },
        eif_theta: alloc::vec![0.0; n],
        components: None,
    }
}

fn build_result(
    table: &ObservationTable,
    spec: &EstimandSpec,
    estimator: EstimatorKind,
    plan: &CrossFitPlan,
    set: &NuisanceSet,
    eif: EifTable,
    theta: f64,
    converged: bool,
    tml: Option<TmlFluctuation>,
) -> Result<EstimateResult> {
    let totals = eif.centered_total(theta);
    check_finite_eif(&totals)?;
    let se = eif.standard_error(theta);
    let (lo, hi) = wald_ci(theta, se);
    let outside = table.y_is_binary() && !(0.0..=1.0).contains(&theta);
    Ok(EstimateResult {
        kind: spec.kind,
        estimator,
        theta_hat: theta,
        se_theta: se,
        ci_theta_low: lo,
        ci_theta_high: hi,
        iie_hat: None,
        se_iie: None,
        ci_iie_low: None,
        ci_iie_high: None,
        n: table.n(),
        j: plan.j,
        seed: plan.seed,
        converged,
        diagnostics: Diagnostics {
            positivity: set.positivity.clone(),
            factors: eif.factors.clone(),
            tml,
            warnings: set.warnings.clone(),
            theta_outside_unit: outside,
        },
        eif_theta: totals,
        components: Some(eif),
    })
}

/// Cross-fitted one-step estimator from freshly fitted nuisances.
pub fn one_step(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
    stabilize: bool,
) -> Result<EstimateResult> {
    spec.validate(table)?;
    check_arm_counts(table, &spec.arms)?;
    if let Some(c) = constant_outcome(table) {
        return Ok(constant_result(table, spec, EstimatorKind::OneStep, plan, c));
    }
    let (set, _models) = fit_nuisances(table, spec, plan, config)?;
    one_step_from_set(table, spec, plan, &set, stabilize)
}

/// One-step estimator from an externally supplied nuisance set (oracle
/// injection and robustness studies).
pub fn one_step_from_set(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    set: &NuisanceSet,
    stabilize: bool,
) -> Result<EstimateResult> {
    check_arm_counts(table, &spec.arms)?;
    let eif = eif_components(table, spec, set, stabilize)?;
    let theta = eif.one_step_theta();
    build_result(table, spec, EstimatorKind::OneStep, plan, set, eif, theta, true, None)
}

/// Linear rescaling of the outcome into [0, 1] for targeted updates on a
/// continuous outcome; the identity for binary outcomes.
struct YScale {
    lo: f64,
    range: f64,
    active: bool,
}

impl YScale {
    fn for_table(table: &ObservationTable) -> Result<YScale> {
        if table.y_is_binary() {
            return Ok(YScale { lo: 0.0, range: 1.0, active: false });
        }
        let lo = table.y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = table.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Invalid("degenerate outcome range".into()));
        }
        Ok(YScale { lo, range: hi - lo, active: true })
    }

    /// Scales a table and per-fold outcome-regression predictions in place.
    fn apply(&self, table: &mut ObservationTable, folds: &mut [FoldEvals]) {
        if !self.active {
            return;
        }
        for v in table.y.iter_mut() {
            *v = (*v - self.lo) / self.range;
        }
        for fe in folds.iter_mut() {
            for col in [&mut fe.b_obs, &mut fe.b_aprime] {
                for v in col.iter_mut() {
                    *v = math::clamp((*v - self.lo) / self.range, 0.0, 1.0);
                }
            }
        }
    }
}

/// Assembles a cross-fitted nuisance set for the single-mediator estimands
/// from (possibly tilted) per-fold evaluations.
fn set_from_folds_theta_k(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
    folds: &[FoldEvals],
    base: &NuisanceSet,
) -> Result<NuisanceSet> {
    let down = downstream_theta_k(table, spec, plan, config, folds)?;
    let mut set = base.clone();
    set.g_aprime = crossfit_column(plan, folds, |f| &f.g_aprime);
    set.b_obs = crossfit_column(plan, folds, |f| &f.b_obs);
    set.b_aprime = crossfit_column(plan, folds, |f| &f.b_aprime);
    set.q1_astar = crossfit_column(plan, folds, |f| &f.q1_astar);
    set.q1_aprime = crossfit_column(plan, folds, |f| &f.q1_aprime);
    set.r1_aprime = crossfit_column(plan, folds, |f| &f.r1_aprime);
    set.r1_astar = crossfit_column(plan, folds, |f| &f.r1_astar);
    set.s_aprime = down.s_aprime;
    set.u1_aprime = down.u1_aprime;
    set.u0_aprime = down.u0_aprime;
    set.v_aprime = down.v_aprime;
    set.lmean_aprime = down.lmean_aprime;
    Ok(set)
}

/// Plug-in estimate at a targeted fit: the targeted components contribute
/// zero by construction, leaving the untargeted corrections plus the
/// baseline projection.
fn plugin_theta(eif: &EifTable) -> f64 {
    let n = eif.n();
    let mut acc = KahanSum::new();
    for i in 0..n {
        acc.add(eif.d_z[i] + eif.d_l[i] + eif.v_term[i]);
    }
    acc.value() / n as f64
}

/// Targeted minimum-loss estimator. Dispatches on the estimand: the partial
/// targeted update for the single-mediator estimands (outcome and mediator
/// components tilted; ancestor and descendant components corrected
/// one-step style), the full update for the joint shift.
pub fn tml(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<EstimateResult> {
    spec.validate(table)?;
    check_arm_counts(table, &spec.arms)?;
    if let Some(c) = constant_outcome(table) {
        return Ok(constant_result(table, spec, EstimatorKind::Tml, plan, c));
    }
    match spec.kind {
        EstimandKind::ThetaKPrime | EstimandKind::ThetaK => {
            tml_theta_k_family(table, spec, plan, config)
        }
        EstimandKind::ThetaAll => tml_theta_all(table, spec, plan, config),
    }
}

fn tml_theta_k_family(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<EstimateResult> {
    let n = table.n();
    let (set0, models) = fit_nuisances(table, spec, plan, config)?;
    let mut folds = models.folds.clone();

    let scale = YScale::for_table(table)?;
    let mut work = table.clone();
    scale.apply(&mut work, &mut folds);

    let part = spec.partition.as_ref().expect("validated");
    let mk_col = table.mediators[part.k_index].clone();
    let a_prime_row: Vec<bool> = table.a.iter().map(|&a| a == spec.arms.a_prime).collect();

    let mut fluct = TmlFluctuation {
        eps_y: Vec::new(),
        eps_mk: Vec::new(),
        iterations: 0,
        score_y: 0.0,
        score_mk: 0.0,
        tol: 0.0,
    };
    let mut converged = false;
    let mut set = set_from_folds_theta_k(&work, spec, plan, config, &folds, &set0)?;
    let mut eif = eif_components(&work, spec, &set, false)?;
    loop {
        let se = eif.standard_error(eif.one_step_theta());
        let tol = tml_tol(se, n);
        let [mean_dy, _, mean_dmk, _] = eif.component_means();
        fluct.score_y = mean_dy;
        fluct.score_mk = mean_dmk;
        fluct.tol = tol;
        if math::abs(mean_dy) <= tol && math::abs(mean_dmk) <= tol {
            converged = true;
            break;
        }
        if fluct.iterations >= TML_MAX_ITER {
            break;
        }

        // (i) Outcome tilt on exposed rows.
        let mut ys = Vec::new();
        let mut hs = Vec::new();
        let mut offs = Vec::new();
        for i in 0..n {
            if a_prime_row[i] {
                let h = prob_at(mk_col[i], set.q1_astar[i])
                    / (set.g_aprime[i] * prob_at(mk_col[i], set.r1_aprime[i]));
                ys.push(work.y[i]);
                hs.push(h);
                offs.push(logit_guarded(set.b_obs[i]));
            }
        }
        let eps_y = offset_logistic(&ys, &hs, &offs)?;
        for fe in folds.iter_mut() {
            for i in 0..n {
                let h = prob_at(mk_col[i], fe.q1_astar[i])
                    / (fe.g_aprime[i] * prob_at(mk_col[i], fe.r1_aprime[i]));
                fe.b_aprime[i] = math::expit(logit_guarded(fe.b_aprime[i]) + eps_y * h);
                if a_prime_row[i] {
                    // At the exposed arm the observed-exposure prediction is
                    // the counterfactual one.
                    fe.b_obs[i] = fe.b_aprime[i];
                }
            }
        }

        // (ii) Mediator tilt on reference rows, clever covariate from the
        // current repeated regressions.
        let mut ms = Vec::new();
        let mut hs_m = Vec::new();
        let mut offs_m = Vec::new();
        for i in 0..n {
            if !a_prime_row[i] {
                let h = (set.u1_aprime[i] - set.u0_aprime[i]) / (1.0 - set.g_aprime[i]);
                ms.push(mk_col[i]);
                hs_m.push(h);
                offs_m.push(logit_guarded(set.q1_astar[i]));
            }
        }
        let eps_mk = offset_logistic(&ms, &hs_m, &offs_m)?;
        for fe in folds.iter_mut() {
            for i in 0..n {
                let h = (set.u1_aprime[i] - set.u0_aprime[i]) / (1.0 - fe.g_aprime[i]);
                fe.q1_astar[i] = math::expit(logit_guarded(fe.q1_astar[i]) + eps_mk * h);
            }
        }

        fluct.eps_y.push(eps_y);
        fluct.eps_mk.push(eps_mk);
        fluct.iterations += 1;

        // (iii) Recompute the repeated regressions from the tilted fits.
        set = set_from_folds_theta_k(&work, spec, plan, config, &folds, &set0)?;
        eif = eif_components(&work, spec, &set, false)?;
    }

    let theta_scaled = plugin_theta(&eif);
    let theta = scale.lo + scale.range * theta_scaled;
    if scale.active {
        // Back-transform the influence function to the outcome scale.
        for col in [
            &mut eif.d_y,
            &mut eif.d_z,
            &mut eif.d_mk,
            &mut eif.d_l,
            &mut eif.v_term,
        ] {
            for v in col.iter_mut() {
                *v *= scale.range;
            }
        }
        // v_term was scaled multiplicatively; restore its offset.
        for v in eif.v_term.iter_mut() {
            *v += scale.lo;
        }
    }
    build_result(
        table,
        spec,
        EstimatorKind::Tml,
        plan,
        &set,
        eif,
        theta,
        converged,
        Some(fluct),
    )
}

fn tml_theta_all(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<EstimateResult> {
    let n = table.n();
    let (set0, models) = fit_nuisances(table, spec, plan, config)?;
    let mut folds = models.folds.clone();

    let scale = YScale::for_table(table)?;
    let mut work = table.clone();
    scale.apply(&mut work, &mut folds);

    let a_prime_row: Vec<bool> = table.a.iter().map(|&a| a == spec.arms.a_prime).collect();

    let mut fluct = TmlFluctuation {
        eps_y: Vec::new(),
        eps_mk: Vec::new(),
        iterations: 0,
        score_y: 0.0,
        score_mk: 0.0,
        tol: 0.0,
    };
    let mut converged = false;
    let (mut set, mut eif);
    loop {
        // Refit u(a*, w) from the current (tilted) outcome regression, then
        // tilt it so the mediator component's score vanishes.
        let u_raw = u_astar_column(&work, spec, plan, config, &folds)?;
        let b_ap = crossfit_column(plan, &folds, |f| &f.b_aprime);
        let g_ap = crossfit_column(plan, &folds, |f| &f.g_aprime);
        let mut ys_u = Vec::new();
        let mut hs_u = Vec::new();
        let mut offs_u = Vec::new();
        for i in 0..n {
            if !a_prime_row[i] {
                ys_u.push(math::clamp(b_ap[i], 0.0, 1.0));
                hs_u.push(1.0 / (1.0 - g_ap[i]));
                offs_u.push(logit_guarded(u_raw[i]));
            }
        }
        let eps_u = offset_logistic(&ys_u, &hs_u, &offs_u)?;
        let u_tilted: Vec<f64> = (0..n)
            .map(|i| {
                math::expit(logit_guarded(u_raw[i]) + eps_u / (1.0 - g_ap[i]))
            })
            .collect();

        let mut s = set0.clone();
        s.g_aprime = g_ap.clone();
        s.b_obs = crossfit_column(plan, &folds, |f| &f.b_obs);
        s.b_aprime = b_ap;
        s.ratio_astar_aprime = crossfit_column(plan, &folds, |f| &f.ratio_astar_aprime);
        s.u_astar = u_tilted;
        set = s;
        eif = eif_components(&work, spec, &set, false)?;

        let se = eif.standard_error(eif.one_step_theta());
        let tol = tml_tol(se, n);
        let [mean_dy, _, mean_dmk, _] = eif.component_means();
        fluct.score_y = mean_dy;
        fluct.score_mk = mean_dmk;
        fluct.tol = tol;
        fluct.eps_mk.push(eps_u);
        if math::abs(mean_dy) <= tol && math::abs(mean_dmk) <= tol {
            converged = true;
            break;
        }
        if fluct.iterations >= TML_MAX_ITER {
            break;
        }

        // Outcome tilt on exposed rows with the density-ratio covariate.
        let mut ys = Vec::new();
        let mut hs = Vec::new();
        let mut offs = Vec::new();
        for i in 0..n {
            if a_prime_row[i] {
                ys.push(work.y[i]);
                hs.push(set.ratio_astar_aprime[i] / (1.0 - set.g_aprime[i]));
                offs.push(logit_guarded(set.b_obs[i]));
            }
        }
        let eps_y = offset_logistic(&ys, &hs, &offs)?;
        for fe in folds.iter_mut() {
            for i in 0..n {
                let h = fe.ratio_astar_aprime[i] / (1.0 - fe.g_aprime[i]);
                fe.b_aprime[i] = math::expit(logit_guarded(fe.b_aprime[i]) + eps_y * h);
                if a_prime_row[i] {
                    fe.b_obs[i] = fe.b_aprime[i];
                }
            }
        }
        fluct.eps_y.push(eps_y);
        fluct.iterations += 1;
    }

    let theta_scaled = plugin_theta(&eif);
    let theta = scale.lo + scale.range * theta_scaled;
    if scale.active {
        for col in [&mut eif.d_y, &mut eif.d_mk, &mut eif.v_term] {
            for v in col.iter_mut() {
                *v *= scale.range;
            }
        }
        for v in eif.v_term.iter_mut() {
            *v += scale.lo;
        }
    }
    build_result(
        table,
        spec,
        EstimatorKind::Tml,
        plan,
        &set,
        eif,
        theta,
        converged,
        Some(fluct),
    )
}

/// Cross-fitted augmented inverse-probability estimator of E(Y_{a'}).
pub fn total_effect(
    table: &ObservationTable,
    arms: &ArmSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<TotalEffect> {
    arms.validate(table)?;
    check_arm_counts(table, arms)?;
    let n = table.n();
    let a_ind: Vec<f64> = table
        .a
        .iter()
        .map(|&a| if a == arms.a_prime { 1.0 } else { 0.0 })
        .collect();

    // Designs on (A, W) and (W); a bare estimand shell supplies the arms.
    let shell = EstimandSpec::theta_all(*arms);
    let sel_q = VarSel { a: true, ..VarSel::default() };
    let sel_g = VarSel::default();
    let x_q_obs = build_design(&base_columns(table, &shell, sel_q, None, None), config.expansion)?;
    let x_q_ap = build_design(
        &base_columns(table, &shell, sel_q, Some(1.0), None),
        config.expansion,
    )?;
    let x_g = build_design(&base_columns(table, &shell, sel_g, None, None), config.expansion)?;

    let eps = config.trunc_bound;
    let mut q_ap = alloc::vec![0.0; n];
    let mut g = alloc::vec![0.0; n];
    for fold in 0..plan.j {
        let train_rows: Vec<usize> =
            (0..n).filter(|&i| plan.assignments[i] != fold).collect();
        let m_q = train(
            &config.outcome,
            &x_q_obs,
            &table.y,
            &train_rows,
            mix_seed(config.seed, fold, 21),
        )?;
        let m_g = train(
            &config.binary,
            &x_g,
            &a_ind,
            &train_rows,
            mix_seed(config.seed, fold, 22),
        )?;
        let q_pred = m_q.predict(&x_q_ap);
        let g_pred = m_g.predict(&x_g);
        for i in 0..n {
            if plan.assignments[i] == fold {
                q_ap[i] = q_pred[i];
                g[i] = math::clamp(g_pred[i], eps, 1.0 - eps);
            }
        }
    }

    let mut acc = KahanSum::new();
    let mut rows = alloc::vec![0.0; n];
    for i in 0..n {
        let v = q_ap[i] + a_ind[i] / g[i] * (table.y[i] - q_ap[i]);
        rows[i] = v;
        acc.add(v);
    }
    let estimate = acc.value() / n as f64;
    check_finite_eif(&rows)?;
    let eif: Vec<f64> = rows.iter().map(|&v| v - estimate).collect();
    let se = math::sample_sd(&eif) / math::sqrt(n as f64);
    Ok(TotalEffect { estimate, se, eif })
}

/// Fills the indirect-effect block of a θ estimate:
/// IIE = E(Y_{a'}) − θ, with the variance composed from the per-row
/// influence functions of both estimates.
pub fn assemble_iie(total: &TotalEffect, theta: &EstimateResult) -> Result<EstimateResult> {
    if total.eif.len() != theta.eif_theta.len() {
        return Err(Error::Invalid(alloc::format!(
            "row mismatch: total effect over {} rows, theta over {}",
            total.eif.len(),
            theta.eif_theta.len()
        )));
    }
    let n = total.eif.len();
    let iie = total.estimate - theta.theta_hat;
    let d: Vec<f64> = (0..n).map(|i| total.eif[i] - theta.eif_theta[i]).collect();
    let se = math::sample_sd(&d) / math::sqrt(n as f64);
    let (lo, hi) = wald_ci(iie, se);
    let mut out = theta.clone();
    out.iie_hat = Some(iie);
    out.se_iie = Some(se);
    out.ci_iie_low = Some(lo);
    out.ci_iie_high = Some(hi);
    Ok(out)
}

/// Runs the configured estimator for θ and assembles the indirect effect
/// against the total-effect estimate on the same plan.
pub fn estimate(table: &ObservationTable, config: &PipelineConfig) -> Result<EstimateResult> {
    let stratified = config
        .stratified
        .unwrap_or_else(|| default_stratified(table));
    let plan = partition_folds(table, config.folds, config.seed, stratified)?;
    let theta = match config.estimator {
        EstimatorKind::OneStep => one_step(
            table,
            &config.estimand,
            &plan,
            &config.nuisance,
            config.stabilize,
        )?,
        EstimatorKind::Tml => tml(table, &config.estimand, &plan, &config.nuisance)?,
    };
    let total = total_effect(table, &config.estimand.arms, &plan, &config.nuisance)?;
    assemble_iie(&total, &theta)
}

/// Multi-seed replication: the pipeline runs once per seed; replicates that
/// failed to converge or produced an extreme indirect effect (|IIE| > 1 on
/// a binary outcome) are excluded with the reason recorded, never silently.
/// Points aggregate by arithmetic mean, variances by arithmetic mean.
pub fn replicate(
    table: &ObservationTable,
    config: &PipelineConfig,
    seeds: &[u64],
) -> Result<ReplicateReport> {
    if seeds.is_empty() {
        return Err(Error::Invalid("at least one seed required".into()));
    }
    let binary_y = table.y_is_binary();
    let mut per_seed = Vec::new();
    let mut excluded = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for &seed in seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        cfg.nuisance.seed = seed;
        let res = estimate(table, &cfg)?;
        let iie = res.iie_hat.expect("estimate() always assembles the IIE");
        if !res.converged {
            excluded.push((seed, String::from("targeted update did not converge")));
        } else if binary_y && math::abs(iie) > 1.0 {
            excluded.push((
                seed,
                alloc::format!("extreme indirect effect {iie:.4} on a binary outcome"),
            ));
        } else {
            kept.push(per_seed.len());
        }
        per_seed.push(res);
    }
    if kept.is_empty() {
        return Err(Error::Estimation(
            "all replicates were excluded (non-convergence or extreme estimates)".into(),
        ));
    }

    let m = kept.len() as f64;
    let mean_of = |f: &dyn Fn(&EstimateResult) -> f64| -> f64 {
        let mut acc = KahanSum::new();
        for &i in &kept {
            acc.add(f(&per_seed[i]));
        }
        acc.value() / m
    };
    let theta = mean_of(&|r| r.theta_hat);
    let var_theta = mean_of(&|r| r.se_theta * r.se_theta);
    let se_theta = math::sqrt(var_theta);
    let iie = mean_of(&|r| r.iie_hat.expect("assembled"));
    let var_iie = mean_of(&|r| {
        let s = r.se_iie.expect("assembled");
        s * s
    });
    let se_iie = math::sqrt(var_iie);
    let thetas: Vec<f64> = kept.iter().map(|&i| per_seed[i].theta_hat).collect();
    let between_sd = if thetas.len() > 1 {
        math::sample_sd(&thetas)
    } else {
        0.0
    };

    let (t_lo, t_hi) = wald_ci(theta, se_theta);
    let (i_lo, i_hi) = wald_ci(iie, se_iie);
    let first = &per_seed[kept[0]];
    let aggregate = EstimateResult {
        kind: first.kind,
        estimator: first.estimator,
        theta_hat: theta,
        se_theta,
        ci_theta_low: t_lo,
        ci_theta_high: t_hi,
        iie_hat: Some(iie),
        se_iie: Some(se_iie),
        ci_iie_low: Some(i_lo),
        ci_iie_high: Some(i_hi),
        n: first.n,
        j: first.j,
        seed: seeds[0],
        converged: true,
        diagnostics: Diagnostics {
            positivity: first.diagnostics.positivity.clone(),
            factors: StabilizationFactors::unit(),
            tml: None,
            warnings: alloc::vec![alloc::format!(
                "aggregate of {} replicates ({} excluded)",
                kept.len(),
                excluded.len()
            )],
            theta_outside_unit: binary_y && !(0.0..=1.0).contains(&theta),
        },
        eif_theta: Vec::new(),
        components: None,
    };
    Ok(ReplicateReport {
        aggregate,
        per_seed,
        excluded,
        between_seed_sd_theta: between_sd,
    })
}
