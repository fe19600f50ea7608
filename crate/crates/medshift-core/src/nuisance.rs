//! Cross-fitted nuisance estimation.
//!
//! For each fold, every nuisance model is trained on the complement and
//! evaluated where needed. The directly-estimable nuisances are the outcome
//! regression `b`, the propensity `g`, the marginal mediator density
//! `q(m_k | a, w)`, the conditional mediator density `r(m_k | a, z, w)`,
//! and (for the joint-shift estimand) the exposure classifier
//! `p(a | m, w)`. The functionals `s`, `u`, `v`, and `lmean` are fitted by
//! repeated regression: a pseudo-outcome built from the direct fits is
//! regressed on the appropriate conditioning set, entirely within the
//! training complement, and predicted on the held-out fold.
//!
//! Per-fold evaluations on *all* rows are retained so that targeted
//! updates can re-derive the downstream functionals from a tilted outcome
//! regression without refitting the direct nuisances.

use crate::data::{
    CrossFitPlan, EstimandKind, EstimandSpec, ObservationTable, PositivityReport,
    DEFAULT_TRUNC_BOUND,
};
use crate::error::{Error, Result};
use crate::learners::{fit_super_learner, Family, StackConfig, SuperLearnerFit};
use crate::math::{self, Matrix};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Design expansion applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// Main effects only.
    Main,
    /// Products over every nonempty subset of the base columns. On
    /// discrete data this saturates the design, so a GLM reproduces cell
    /// means exactly.
    Interactions,
}

/// Largest base-column count admitted by the interaction expansion.
pub const MAX_INTERACTION_COLUMNS: usize = 12;

/// How the nuisance layer is configured: one candidate library per response
/// type, the design expansion, the positivity truncation bound, and the
/// seed for inner cross-validation fold draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// Library for the outcome regression `b`.
    pub outcome: StackConfig,
    /// Library for the probability-valued fits `g`, `q`, `r`, and the
    /// exposure classifier.
    pub binary: StackConfig,
    /// Library for the repeated regressions `s`, `u`, `v`, `lmean`
    /// (continuous pseudo-outcomes).
    pub pseudo: StackConfig,
    pub expansion: Expansion,
    pub trunc_bound: f64,
    pub seed: u64,
}

impl NuisanceConfig {
    /// Single-GLM libraries throughout; no inner cross-validation cost.
    pub fn glm(outcome_family: Family) -> Self {
        NuisanceConfig {
            outcome: StackConfig::glm_only(outcome_family),
            binary: StackConfig::glm_only(Family::Binomial),
            pseudo: StackConfig::glm_only(Family::Gaussian),
            expansion: Expansion::Main,
            trunc_bound: DEFAULT_TRUNC_BOUND,
            seed: 0,
        }
    }

    /// The full candidate library for every nuisance.
    pub fn full(outcome_family: Family) -> Self {
        NuisanceConfig {
            outcome: StackConfig::full_library(outcome_family),
            binary: StackConfig::full_library(Family::Binomial),
            pseudo: StackConfig::full_library(Family::Gaussian),
            expansion: Expansion::Main,
            trunc_bound: DEFAULT_TRUNC_BOUND,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outcome.validate()?;
        self.binary.validate()?;
        self.pseudo.validate()?;
        if !(0.0..0.5).contains(&self.trunc_bound) {
            return Err(Error::Invalid("truncation bound must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Cross-fitted per-row nuisance predictions; every vector has length `n`,
/// and the entry for row `i` comes from models trained without row `i`'s
/// fold. Vectors that an estimand does not use are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub n: usize,
    /// g(a' | w_i); g(a* | w_i) is its complement.
    pub g_aprime: Vec<f64>,
    /// Outcome regression at the observed covariates and exposure.
    pub b_obs: Vec<f64>,
    /// Outcome regression at A = a' and the observed mediator values.
    pub b_aprime: Vec<f64>,
    /// q(M_k = 1 | a*, w_i) and q(M_k = 1 | a', w_i).
    pub q1_astar: Vec<f64>,
    pub q1_aprime: Vec<f64>,
    /// r(M_k = 1 | a', z_i, w_i) and r(M_k = 1 | a*, z_i, w_i).
    pub r1_aprime: Vec<f64>,
    pub r1_astar: Vec<f64>,
    /// s(a', z_i, w_i).
    pub s_aprime: Vec<f64>,
    /// u(a', 1, w_i) and u(a', 0, w_i).
    pub u1_aprime: Vec<f64>,
    pub u0_aprime: Vec<f64>,
    /// v(a', w_i).
    pub v_aprime: Vec<f64>,
    /// E(b(a', Z, M_k, L, W) | A = a', Z = z_i, M_k = m_ki, W = w_i).
    pub lmean_aprime: Vec<f64>,
    /// Joint-shift channel: p(a* | m_i, w_i) / p(a' | m_i, w_i).
    pub ratio_astar_aprime: Vec<f64>,
    /// Joint-shift channel: u(a*, w_i) = E(b(a', M, W) | A = a*, W = w_i).
    pub u_astar: Vec<f64>,
    pub positivity: PositivityReport,
    pub warnings: Vec<String>,
}

impl NuisanceSet {
    /// An all-zero set; corruption studies and oracles fill the columns
    /// directly.
    pub fn zeroed(n: usize, trunc_bound: f64) -> Self {
        let z = || alloc::vec![0.0; n];
        NuisanceSet {
            n,
            g_aprime: z(),
            b_obs: z(),
            b_aprime: z(),
            q1_astar: z(),
            q1_aprime: z(),
            r1_aprime: z(),
            r1_astar: z(),
            s_aprime: z(),
            u1_aprime: z(),
            u0_aprime: z(),
            v_aprime: z(),
            lmean_aprime: z(),
            ratio_astar_aprime: z(),
            u_astar: z(),
            positivity: PositivityReport {
                min_g: 1.0,
                min_r: 1.0,
                trunc_bound,
                n_truncated: 0,
            },
            warnings: Vec::new(),
        }
    }
}

/// Per-fold model evaluations on **all** rows (training rows included),
/// used to build pseudo-outcomes within the training complement and to
/// re-derive the downstream functionals during targeted updates.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvals {
    pub b_obs: Vec<f64>,
    pub b_aprime: Vec<f64>,
    pub g_aprime: Vec<f64>,
    pub q1_astar: Vec<f64>,
    pub q1_aprime: Vec<f64>,
    pub r1_aprime: Vec<f64>,
    pub r1_astar: Vec<f64>,
    pub ratio_astar_aprime: Vec<f64>,
}

/// The fitted nuisance layer: per-fold evaluations plus the plan that
/// assigns rows to folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedNuisanceModels {
    pub plan: CrossFitPlan,
    pub folds: Vec<FoldEvals>,
}

/// Downstream functional columns produced by the repeated regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamColumns {
    pub s_aprime: Vec<f64>,
    pub u1_aprime: Vec<f64>,
    pub u0_aprime: Vec<f64>,
    pub v_aprime: Vec<f64>,
    pub lmean_aprime: Vec<f64>,
}

/// Which base variables enter a design.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct VarSel {
    pub(crate) a: bool,
    pub(crate) z: bool,
    pub(crate) mk: bool,
    pub(crate) l: bool,
    pub(crate) all_m: bool,
}

/// Assembles base design columns (confounders always included, last). The
/// exposure enters as the indicator of the exposed arm; overrides replace
/// a column with a constant counterfactual value.
pub(crate) fn base_columns(
    table: &ObservationTable,
    spec: &EstimandSpec,
    sel: VarSel,
    a_override: Option<f64>,
    mk_override: Option<f64>,
) -> Vec<Vec<f64>> {
    let n = table.n();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if sel.a {
        let col = match a_override {
            Some(v) => alloc::vec![v; n],
            None => table
                .a
                .iter()
                .map(|&a| if a == spec.arms.a_prime { 1.0 } else { 0.0 })
                .collect(),
        };
        cols.push(col);
    }
    let part = spec.partition.as_ref();
    if sel.z {
        for &zi in &part.expect("partition required").z_indices {
            cols.push(table.mediators[zi].clone());
        }
    }
    if sel.mk {
        let k = part.expect("partition required").k_index;
        let col = match mk_override {
            Some(v) => alloc::vec![v; n],
            None => table.mediators[k].clone(),
        };
        cols.push(col);
    }
    if sel.l {
        for &li in &part.expect("partition required").l_indices {
            cols.push(table.mediators[li].clone());
        }
    }
    if sel.all_m {
        for m in &table.mediators {
            cols.push(m.clone());
        }
    }
    for wc in &table.w {
        cols.push(wc.clone());
    }
    cols
}

/// Expands base columns into a design matrix.
pub(crate) fn build_design(cols: &[Vec<f64>], expansion: Expansion) -> Result<Matrix> {
    let p = cols.len();
    let n = if p > 0 { cols[0].len() } else { 0 };
    match expansion {
        Expansion::Main => {
            let mut m = Matrix::zeros(n, p);
            for (j, c) in cols.iter().enumerate() {
                for i in 0..n {
                    m.set(i, j, c[i]);
                }
            }
            Ok(m)
        }
        Expansion::Interactions => {
            if p > MAX_INTERACTION_COLUMNS {
                return Err(Error::Invalid(alloc::format!(
                    "interaction expansion supports at most {MAX_INTERACTION_COLUMNS} base columns (got {p})"
                )));
            }
            let q = (1usize << p) - 1;
            let mut m = Matrix::zeros(n, q);
            for mask in 1..=q {
                for i in 0..n {
                    let mut v = 1.0;
                    for (j, c) in cols.iter().enumerate() {
                        if mask & (1 << j) != 0 {
                            v *= c[i];
                        }
                    }
                    m.set(i, mask - 1, v);
                }
            }
            Ok(m)
        }
    }
}

/// Trains one super learner on the given training rows of a full design.
pub(crate) fn train(
    config: &StackConfig,
    design: &Matrix,
    y: &[f64],
    train_rows: &[usize],
    seed: u64,
) -> Result<SuperLearnerFit> {
    let x = design.take_rows(train_rows);
    let yt: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    fit_super_learner(config, &x, &yt, None, train_rows, seed)
}

pub(crate) fn mix_seed(base: u64, fold: usize, role: u64) -> u64 {
    base ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ role.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Probability of the observed value given the probability of value 1.
#[inline]
pub fn prob_at(m_value: f64, p1: f64) -> f64 {
    if m_value == 1.0 {
        p1
    } else {
        1.0 - p1
    }
}

/// Extracts the cross-fitted column: row `i` takes fold `assignments[i]`'s
/// evaluation.
pub fn crossfit_column<F>(plan: &CrossFitPlan, folds: &[FoldEvals], f: F) -> Vec<f64>
where
    F: Fn(&FoldEvals) -> &[f64],
{
    plan.assignments
        .iter()
        .enumerate()
        .map(|(i, &fold)| f(&folds[fold])[i])
        .collect()
}

/// Fits the full nuisance layer for the given estimand.
pub fn fit_nuisances(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<(NuisanceSet, FittedNuisanceModels)> {
    config.validate()?;
    spec.validate(table)?;
    if plan.assignments.len() != table.n() {
        return Err(Error::Invalid("cross-fit plan does not match the table".into()));
    }
    match spec.kind {
        EstimandKind::ThetaKPrime | EstimandKind::ThetaK => fit_theta_k_family(table, spec, plan, config),
        EstimandKind::ThetaAll => fit_theta_all(table, spec, plan, config),
    }
}

fn fit_theta_k_family(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<(NuisanceSet, FittedNuisanceModels)> {
    let n = table.n();
    let exp = config.expansion;
    let part = spec.partition.as_ref().expect("validated");
    let mk_col = &table.mediators[part.k_index];
    let a_ind: Vec<f64> = table
        .a
        .iter()
        .map(|&a| if a == spec.arms.a_prime { 1.0 } else { 0.0 })
        .collect();

    // Designs shared across folds: observed and counterfactual versions.
    let sel_b = VarSel { a: true, z: true, mk: true, l: true, ..VarSel::default() };
    let sel_g = VarSel::default();
    let sel_q = VarSel { a: true, ..VarSel::default() };
    let sel_r = VarSel { a: true, z: true, ..VarSel::default() };

    let x_b_obs = build_design(&base_columns(table, spec, sel_b, None, None), exp)?;
    let x_b_ap = build_design(&base_columns(table, spec, sel_b, Some(1.0), None), exp)?;
    let x_g = build_design(&base_columns(table, spec, sel_g, None, None), exp)?;
    let x_q_obs = build_design(&base_columns(table, spec, sel_q, None, None), exp)?;
    let x_q_as = build_design(&base_columns(table, spec, sel_q, Some(0.0), None), exp)?;
    let x_q_ap = build_design(&base_columns(table, spec, sel_q, Some(1.0), None), exp)?;
    let x_r_obs = build_design(&base_columns(table, spec, sel_r, None, None), exp)?;
    let x_r_ap = build_design(&base_columns(table, spec, sel_r, Some(1.0), None), exp)?;
    let x_r_as = build_design(&base_columns(table, spec, sel_r, Some(0.0), None), exp)?;

    let eps = config.trunc_bound;
    let clip = |v: f64| math::clamp(v, eps, 1.0 - eps);

    let mut folds = Vec::with_capacity(plan.j);
    let mut raw_g = Vec::with_capacity(n);
    let mut raw_r = Vec::with_capacity(n);
    for fold in 0..plan.j {
        let train_rows: Vec<usize> = (0..n).filter(|&i| plan.assignments[i] != fold).collect();
        let m_b = train(&config.outcome, &x_b_obs, &table.y, &train_rows, mix_seed(config.seed, fold, 1))?;
        let m_g = train(&config.binary, &x_g, &a_ind, &train_rows, mix_seed(config.seed, fold, 2))?;
        let m_q = train(&config.binary, &x_q_obs, mk_col, &train_rows, mix_seed(config.seed, fold, 3))?;
        let m_r = train(&config.binary, &x_r_obs, mk_col, &train_rows, mix_seed(config.seed, fold, 4))?;

        let g_raw = m_g.predict(&x_g);
        let r_ap_raw = m_r.predict(&x_r_ap);
        let r_as_raw = m_r.predict(&x_r_as);
        // Positivity diagnostics use held-out rows only, matching the
        // cross-fitted columns that enter the influence function.
        for i in 0..n {
            if plan.assignments[i] == fold {
                raw_g.push(g_raw[i]);
                raw_g.push(1.0 - g_raw[i]);
                raw_r.push(prob_at(mk_col[i], r_ap_raw[i]));
            }
        }

        folds.push(FoldEvals {
            b_obs: m_b.predict(&x_b_obs),
            b_aprime: m_b.predict(&x_b_ap),
            g_aprime: g_raw.iter().map(|&v| clip(v)).collect(),
            q1_astar: m_q.predict(&x_q_as),
            q1_aprime: m_q.predict(&x_q_ap),
            r1_aprime: r_ap_raw.iter().map(|&v| clip(v)).collect(),
            r1_astar: r_as_raw.iter().map(|&v| clip(v)).collect(),
            ratio_astar_aprime: Vec::new(),
        });
    }

    let models = FittedNuisanceModels {
        plan: plan.clone(),
        folds,
    };
    let down = downstream_theta_k(table, spec, plan, config, &models.folds)?;

    let mut set = NuisanceSet::zeroed(n, eps);
    set.g_aprime = crossfit_column(plan, &models.folds, |f| &f.g_aprime);
    set.b_obs = crossfit_column(plan, &models.folds, |f| &f.b_obs);
    set.b_aprime = crossfit_column(plan, &models.folds, |f| &f.b_aprime);
    set.q1_astar = crossfit_column(plan, &models.folds, |f| &f.q1_astar);
    set.q1_aprime = crossfit_column(plan, &models.folds, |f| &f.q1_aprime);
    set.r1_aprime = crossfit_column(plan, &models.folds, |f| &f.r1_aprime);
    set.r1_astar = crossfit_column(plan, &models.folds, |f| &f.r1_astar);
    set.s_aprime = down.s_aprime;
    set.u1_aprime = down.u1_aprime;
    set.u0_aprime = down.u0_aprime;
    set.v_aprime = down.v_aprime;
    set.lmean_aprime = down.lmean_aprime;
    set.ratio_astar_aprime = Vec::new();
    set.u_astar = Vec::new();
    set.positivity = PositivityReport::from_raw(&raw_g, &raw_r, eps);
    set.warnings = plan.warnings.clone();
    Ok((set, models))
}

/// Repeated regressions for `s`, `u`, `v`, and `lmean` given per-fold
/// evaluations of the direct nuisances (possibly tilted). Training stays
/// within each fold's complement; predictions land on the held-out rows.
pub fn downstream_theta_k(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
    folds: &[FoldEvals],
) -> Result<DownstreamColumns> {
    let n = table.n();
    let exp = config.expansion;
    let part = spec.partition.as_ref().expect("partition required");
    let mk_col = &table.mediators[part.k_index];
    let a_ind: Vec<f64> = table
        .a
        .iter()
        .map(|&a| if a == spec.arms.a_prime { 1.0 } else { 0.0 })
        .collect();
    let has_z = !part.z_indices.is_empty();
    let has_l = !part.l_indices.is_empty();

    let sel_sv = VarSel { a: true, z: true, ..VarSel::default() };
    let sel_v = VarSel { a: true, ..VarSel::default() };
    let sel_u = VarSel { a: true, mk: true, ..VarSel::default() };
    let sel_lm = VarSel { a: true, z: true, mk: true, ..VarSel::default() };

    let x_sv_obs = build_design(&base_columns(table, spec, sel_sv, None, None), exp)?;
    let x_sv_ap = build_design(&base_columns(table, spec, sel_sv, Some(1.0), None), exp)?;
    let x_v_obs = build_design(&base_columns(table, spec, sel_v, None, None), exp)?;
    let x_v_ap = build_design(&base_columns(table, spec, sel_v, Some(1.0), None), exp)?;
    let x_u_obs = build_design(&base_columns(table, spec, sel_u, None, None), exp)?;
    let x_u_ap1 = build_design(&base_columns(table, spec, sel_u, Some(1.0), Some(1.0)), exp)?;
    let x_u_ap0 = build_design(&base_columns(table, spec, sel_u, Some(1.0), Some(0.0)), exp)?;
    let x_lm_obs = build_design(&base_columns(table, spec, sel_lm, None, None), exp)?;
    let x_lm_ap = build_design(&base_columns(table, spec, sel_lm, Some(1.0), None), exp)?;

    let mut s_col = alloc::vec![0.0; n];
    let mut u1_col = alloc::vec![0.0; n];
    let mut u0_col = alloc::vec![0.0; n];
    let mut v_col = alloc::vec![0.0; n];
    let mut lm_col = alloc::vec![0.0; n];

    for fold in 0..plan.j {
        let fe = &folds[fold];
        let train_rows: Vec<usize> = (0..n).filter(|&i| plan.assignments[i] != fold).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| plan.assignments[i] == fold).collect();

        // Pseudo-outcomes on all rows from this fold's models.
        let mut pseudo_sv = alloc::vec![0.0; n];
        let mut pseudo_u = alloc::vec![0.0; n];
        for i in 0..n {
            let q_obs_astar = prob_at(mk_col[i], fe.q1_astar[i]);
            let (q1_arm, r1_arm) = if a_ind[i] == 1.0 {
                (fe.q1_aprime[i], fe.r1_aprime[i])
            } else {
                (fe.q1_astar[i], fe.r1_astar[i])
            };
            let q_obs_arm = prob_at(mk_col[i], q1_arm);
            let r_obs_arm = prob_at(mk_col[i], r1_arm);
            pseudo_sv[i] = fe.b_obs[i] * q_obs_astar / r_obs_arm;
            pseudo_u[i] = fe.b_obs[i] * q_obs_arm / r_obs_arm;
        }

        let seed = config.seed;
        let m_v = train(&config.pseudo, &x_v_obs, &pseudo_sv, &train_rows, mix_seed(seed, fold, 5))?;
        let v_pred = m_v.predict(&x_v_ap);
        for &i in &test_rows {
            v_col[i] = v_pred[i];
        }

        if has_z {
            let m_s = train(&config.pseudo, &x_sv_obs, &pseudo_sv, &train_rows, mix_seed(seed, fold, 6))?;
            let s_pred = m_s.predict(&x_sv_ap);
            for &i in &test_rows {
                s_col[i] = s_pred[i];
            }
        } else {
            for &i in &test_rows {
                s_col[i] = v_col[i];
            }
        }

        let m_u = train(&config.pseudo, &x_u_obs, &pseudo_u, &train_rows, mix_seed(seed, fold, 7))?;
        let u1_pred = m_u.predict(&x_u_ap1);
        let u0_pred = m_u.predict(&x_u_ap0);
        for &i in &test_rows {
            u1_col[i] = u1_pred[i];
            u0_col[i] = u0_pred[i];
        }

        if has_l {
            let m_lm = train(&config.pseudo, &x_lm_obs, &fe.b_aprime, &train_rows, mix_seed(seed, fold, 8))?;
            let lm_pred = m_lm.predict(&x_lm_ap);
            for &i in &test_rows {
                lm_col[i] = lm_pred[i];
            }
        } else {
            // Without descendants, b is already a function of (a, z, m_k, w)
            // and its conditional mean is itself.
            for &i in &test_rows {
                lm_col[i] = fe.b_aprime[i];
            }
        }
    }

    Ok(DownstreamColumns {
        s_aprime: s_col,
        u1_aprime: u1_col,
        u0_aprime: u0_col,
        v_aprime: v_col,
        lmean_aprime: lm_col,
    })
}

fn fit_theta_all(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
) -> Result<(NuisanceSet, FittedNuisanceModels)> {
    let n = table.n();
    let exp = config.expansion;
    let a_ind: Vec<f64> = table
        .a
        .iter()
        .map(|&a| if a == spec.arms.a_prime { 1.0 } else { 0.0 })
        .collect();

    let sel_b = VarSel { a: true, all_m: true, ..VarSel::default() };
    let sel_g = VarSel::default();
    let sel_cls = VarSel { all_m: true, ..VarSel::default() };

    let x_b_obs = build_design(&base_columns(table, spec, sel_b, None, None), exp)?;
    let x_b_ap = build_design(&base_columns(table, spec, sel_b, Some(1.0), None), exp)?;
    let x_g = build_design(&base_columns(table, spec, sel_g, None, None), exp)?;
    let x_cls = build_design(&base_columns(table, spec, sel_cls, None, None), exp)?;

    let eps = config.trunc_bound;
    let clip = |v: f64| math::clamp(v, eps, 1.0 - eps);

    let mut folds = Vec::with_capacity(plan.j);
    let mut raw_g = Vec::new();
    let mut raw_pi = Vec::new();
    for fold in 0..plan.j {
        let train_rows: Vec<usize> = (0..n).filter(|&i| plan.assignments[i] != fold).collect();
        let m_b = train(&config.outcome, &x_b_obs, &table.y, &train_rows, mix_seed(config.seed, fold, 11))?;
        let m_g = train(&config.binary, &x_g, &a_ind, &train_rows, mix_seed(config.seed, fold, 12))?;
        let m_cls = train(&config.binary, &x_cls, &a_ind, &train_rows, mix_seed(config.seed, fold, 13))?;

        let g_raw = m_g.predict(&x_g);
        let pi_raw = m_cls.predict(&x_cls);
        for i in 0..n {
            if plan.assignments[i] == fold {
                raw_g.push(g_raw[i]);
                raw_g.push(1.0 - g_raw[i]);
                raw_pi.push(pi_raw[i]);
                raw_pi.push(1.0 - pi_raw[i]);
            }
        }
        let ratio: Vec<f64> = pi_raw
            .iter()
            .map(|&pi| {
                let pi = clip(pi);
                (1.0 - pi) / pi
            })
            .collect();

        folds.push(FoldEvals {
            b_obs: m_b.predict(&x_b_obs),
            b_aprime: m_b.predict(&x_b_ap),
            g_aprime: g_raw.iter().map(|&v| clip(v)).collect(),
            q1_astar: Vec::new(),
            q1_aprime: Vec::new(),
            r1_aprime: Vec::new(),
            r1_astar: Vec::new(),
            ratio_astar_aprime: ratio,
        });
    }

    let models = FittedNuisanceModels {
        plan: plan.clone(),
        folds,
    };
    let u_astar = u_astar_column(table, spec, plan, config, &models.folds)?;

    let mut set = NuisanceSet::zeroed(n, eps);
    set.g_aprime = crossfit_column(plan, &models.folds, |f| &f.g_aprime);
    set.b_obs = crossfit_column(plan, &models.folds, |f| &f.b_obs);
    set.b_aprime = crossfit_column(plan, &models.folds, |f| &f.b_aprime);
    set.ratio_astar_aprime = crossfit_column(plan, &models.folds, |f| &f.ratio_astar_aprime);
    set.u_astar = u_astar;
    set.q1_astar = Vec::new();
    set.q1_aprime = Vec::new();
    set.r1_aprime = Vec::new();
    set.r1_astar = Vec::new();
    set.s_aprime = Vec::new();
    set.u1_aprime = Vec::new();
    set.u0_aprime = Vec::new();
    set.v_aprime = Vec::new();
    set.lmean_aprime = Vec::new();
    set.positivity = PositivityReport::from_raw(&raw_g, &raw_pi, eps);
    set.warnings = plan.warnings.clone();
    Ok((set, models))
}

/// Repeated regression for the joint-shift functional
/// `u(a*, w) = E(b(a', M, W) | A = a*, W = w)`: the pseudo-outcome is the
/// (possibly tilted) outcome regression at A = a', regressed on (A, W).
pub fn u_astar_column(
    table: &ObservationTable,
    spec: &EstimandSpec,
    plan: &CrossFitPlan,
    config: &NuisanceConfig,
    folds: &[FoldEvals],
) -> Result<Vec<f64>> {
    let n = table.n();
    let exp = config.expansion;
    let sel_v = VarSel { a: true, ..VarSel::default() };
    let x_obs = build_design(&base_columns(table, spec, sel_v, None, None), exp)?;
    let x_as = build_design(&base_columns(table, spec, sel_v, Some(0.0), None), exp)?;

    let mut col = alloc::vec![0.0; n];
    for fold in 0..plan.j {
        let fe = &folds[fold];
        let train_rows: Vec<usize> = (0..n).filter(|&i| plan.assignments[i] != fold).collect();
        let m = train(&config.pseudo, &x_obs, &fe.b_aprime, &train_rows, mix_seed(config.seed, fold, 14))?;
        let pred = m.predict(&x_as);
        for i in 0..n {
            if plan.assignments[i] == fold {
                col[i] = pred[i];
            }
        }
    }
    Ok(col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_folds, ArmSpec, EstimandSpec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic_table(n: usize, seed: u64) -> ObservationTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut a = Vec::new();
        let mut w = Vec::new();
        let mut z = Vec::new();
        let mut mk = Vec::new();
        let mut l = Vec::new();
        for _ in 0..n {
            let wi = if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 };
            let ai = if rng.gen::<f64>() < 0.35 + 0.2 * wi { 1.0 } else { 0.0 };
            let zi = if rng.gen::<f64>() < 0.3 + 0.25 * ai + 0.15 * wi { 1.0 } else { 0.0 };
            let mi = if rng.gen::<f64>() < 0.25 + 0.2 * ai + 0.2 * zi + 0.1 * wi { 1.0 } else { 0.0 };
            let li = if rng.gen::<f64>() < 0.2 + 0.15 * ai + 0.2 * mi + 0.1 * zi + 0.1 * wi { 1.0 } else { 0.0 };
            let yi = if rng.gen::<f64>() < 0.15 + 0.1 * ai + 0.2 * mi + 0.15 * li + 0.1 * zi + 0.1 * wi { 1.0 } else { 0.0 };
            y.push(yi);
            a.push(ai);
            w.push(wi);
            z.push(zi);
            mk.push(mi);
            l.push(li);
        }
        ObservationTable::new(y, a, alloc::vec![w], alloc::vec![z, mk, l]).unwrap()
    }

    fn spec_k_prime() -> EstimandSpec {
        EstimandSpec::theta_k_prime(
            crate::data::MediatorPartition {
                z_indices: alloc::vec![0],
                k_index: 1,
                l_indices: alloc::vec![2],
            },
            ArmSpec { a_prime: 1.0, a_star: 0.0 },
        )
    }

    #[test]
    fn columns_are_probabilities_and_deterministic() {
        let table = synthetic_table(400, 9);
        let spec = spec_k_prime();
        let plan = partition_folds(&table, 4, 11, false).unwrap();
        let config = NuisanceConfig::glm(Family::Binomial);
        let (set, _) = fit_nuisances(&table, &spec, &plan, &config).unwrap();
        let (set2, _) = fit_nuisances(&table, &spec, &plan, &config).unwrap();
        assert_eq!(set, set2);
        for i in 0..table.n() {
            for v in [set.g_aprime[i], set.q1_astar[i], set.r1_aprime[i]] {
                assert!((0.0..=1.0).contains(&v), "probability out of range: {v}");
            }
            assert!(set.g_aprime[i] >= config.trunc_bound);
            assert!(set.g_aprime[i] <= 1.0 - config.trunc_bound);
        }
    }

    #[test]
    fn theta_k_skips_descendant_machinery() {
        let table = synthetic_table(300, 5);
        let spec = EstimandSpec::theta_k(1, 3, ArmSpec { a_prime: 1.0, a_star: 0.0 });
        let plan = partition_folds(&table, 3, 2, false).unwrap();
        let config = NuisanceConfig::glm(Family::Binomial);
        let (set, _) = fit_nuisances(&table, &spec, &plan, &config).unwrap();
        // With no descendants, lmean reduces to the outcome regression.
        for i in 0..table.n() {
            assert_eq!(set.lmean_aprime[i], set.b_aprime[i]);
        }
    }

    #[test]
    fn theta_all_channel_is_populated() {
        let table = synthetic_table(300, 6);
        let spec = EstimandSpec::theta_all(ArmSpec { a_prime: 1.0, a_star: 0.0 });
        let plan = partition_folds(&table, 3, 7, false).unwrap();
        let config = NuisanceConfig::glm(Family::Binomial);
        let (set, _) = fit_nuisances(&table, &spec, &plan, &config).unwrap();
        assert!(set.q1_astar.is_empty());
        assert_eq!(set.ratio_astar_aprime.len(), table.n());
        assert_eq!(set.u_astar.len(), table.n());
        for &r in &set.ratio_astar_aprime {
            assert!(r > 0.0 && r.is_finite());
        }
    }

    #[test]
    fn saturated_design_recovers_cell_rates() {
        // With an interaction-expanded design on discrete data, the
        // propensity fit equals in-cell frequencies of the training rows.
        let table = synthetic_table(600, 13);
        let spec = spec_k_prime();
        let plan = partition_folds(&table, 2, 3, false).unwrap();
        let mut config = NuisanceConfig::glm(Family::Binomial);
        config.expansion = Expansion::Interactions;
        let (set, models) = fit_nuisances(&table, &spec, &plan, &config).unwrap();
        // Check fold 0 held-out rows against fold-0 training frequencies.
        for target_w in [0.0, 1.0] {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..table.n() {
                if plan.assignments[i] != 0 && table.w[0][i] == target_w {
                    den += 1.0;
                    if table.a[i] == 1.0 {
                        num += 1.0;
                    }
                }
            }
            let expect = num / den;
            for i in 0..table.n() {
                if plan.assignments[i] == 0 && table.w[0][i] == target_w {
                    assert!((set.g_aprime[i] - expect).abs() < 1e-9);
                }
            }
        }
        let _ = models;
    }
}
