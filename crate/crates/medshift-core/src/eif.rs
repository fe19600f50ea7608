//! Efficient influence function components.
//!
//! For the flow-on estimand the influence function splits into five parts
//! (outcome, ancestor, mediator, descendant, and baseline terms); for the
//! no-flow-on estimand the descendant part vanishes; for the joint-shift
//! estimand only outcome, mediator, and baseline terms remain. Each
//! component is computed row-wise from the cross-fitted nuisance columns.
//!
//! Inverse-probability weights can optionally be stabilized by dividing
//! each component's weight by its empirical mean, which improves finite
//! sample behaviour without changing the asymptotic variance.

use crate::data::{EstimandKind, EstimandSpec, ObservationTable};
use crate::error::{Error, Result};
use crate::math::{self, KahanSum};
use crate::nuisance::{prob_at, NuisanceSet};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Empirical means of the raw inverse-probability weights used for each
/// component; 1.0 where stabilization is off or a component is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationFactors {
    pub y_weight_mean: f64,
    pub z_weight_mean: f64,
    pub mk_weight_mean: f64,
    pub stabilized: bool,
}

impl StabilizationFactors {
    pub fn unit() -> Self {
        StabilizationFactors {
            y_weight_mean: 1.0,
            z_weight_mean: 1.0,
            mk_weight_mean: 1.0,
            stabilized: false,
        }
    }
}

/// Row-wise influence function components. The baseline term is split into
/// the plug-in part `v_term` (the projection of the estimand onto the
/// baseline covariates) and the constant `-theta`, so the table can be
/// built before the point estimate is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifTable {
    pub d_y: Vec<f64>,
    pub d_z: Vec<f64>,
    pub d_mk: Vec<f64>,
    pub d_l: Vec<f64>,
    /// v(a', w_i) for the single-mediator estimands; u(a*, w_i) for the
    /// joint shift.
    pub v_term: Vec<f64>,
    pub factors: StabilizationFactors,
}

impl EifTable {
    pub fn n(&self) -> usize {
        self.d_y.len()
    }

    /// The one-step/estimating-equation point estimate: the sample mean of
    /// the uncentered influence function.
    pub fn one_step_theta(&self) -> f64 {
        let n = self.n();
        let mut acc = KahanSum::new();
        for i in 0..n {
            acc.add(self.d_y[i] + self.d_z[i] + self.d_mk[i] + self.d_l[i] + self.v_term[i]);
        }
        acc.value() / n as f64
    }

    /// Row-wise total influence function centered at `theta`.
    pub fn centered_total(&self, theta: f64) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.d_y[i] + self.d_z[i] + self.d_mk[i] + self.d_l[i] + self.v_term[i] - theta
            })
            .collect()
    }

    /// Standard error of the estimate: sample SD of the centered influence
    /// function over sqrt(n).
    pub fn standard_error(&self, theta: f64) -> f64 {
        let total = self.centered_total(theta);
        math::sample_sd(&total) / math::sqrt(total.len() as f64)
    }

    /// Sample means of (d_y, d_z, d_mk, d_l) — the targeted-update score
    /// diagnostics.
    pub fn component_means(&self) -> [f64; 4] {
        let n = self.n() as f64;
        let mean = |v: &[f64]| {
            let mut acc = KahanSum::new();
            for &x in v {
                acc.add(x);
            }
            acc.value() / n
        };
        [mean(&self.d_y), mean(&self.d_z), mean(&self.d_mk), mean(&self.d_l)]
    }
}

fn check_columns(set: &NuisanceSet, cols: &[(&str, &[f64])], n: usize) -> Result<()> {
    let _ = set;
    for (name, col) in cols {
        if col.len() != n {
            return Err(Error::Invalid(alloc::format!(
                "nuisance column `{name}` has length {} (expected {n})",
                col.len()
            )));
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &x in v {
        acc.add(x);
    }
    acc.value() / v.len() as f64
}

/// Computes the influence-function components for any of the three
/// estimands from the cross-fitted nuisance columns.
pub fn eif_components(
    table: &ObservationTable,
    spec: &EstimandSpec,
    set: &NuisanceSet,
    stabilize: bool,
) -> Result<EifTable> {
    match spec.kind {
        EstimandKind::ThetaKPrime | EstimandKind::ThetaK => {
            eif_theta_k_family(table, spec, set, stabilize)
        }
        EstimandKind::ThetaAll => eif_theta_all(table, spec, set, stabilize),
    }
}

fn eif_theta_k_family(
    table: &ObservationTable,
    spec: &EstimandSpec,
    set: &NuisanceSet,
    stabilize: bool,
) -> Result<EifTable> {
    let n = table.n();
    check_columns(
        set,
        &[
            ("g_aprime", &set.g_aprime),
            ("b_aprime", &set.b_aprime),
            ("q1_astar", &set.q1_astar),
            ("r1_aprime", &set.r1_aprime),
            ("s_aprime", &set.s_aprime),
            ("u1_aprime", &set.u1_aprime),
            ("u0_aprime", &set.u0_aprime),
            ("v_aprime", &set.v_aprime),
            ("lmean_aprime", &set.lmean_aprime),
        ],
        n,
    )?;
    let part = spec.partition.as_ref().ok_or_else(|| {
        Error::Invalid("mediator partition required for this estimand".into())
    })?;
    let mk_col = &table.mediators[part.k_index];

    // Raw component weights.
    let mut w_y = alloc::vec![0.0; n];
    let mut w_z = alloc::vec![0.0; n];
    let mut w_mk = alloc::vec![0.0; n];
    for i in 0..n {
        let is_prime = table.a[i] == spec.arms.a_prime;
        let g_ap = set.g_aprime[i];
        if is_prime {
            let q_obs_astar = prob_at(mk_col[i], set.q1_astar[i]);
            let r_obs_aprime = prob_at(mk_col[i], set.r1_aprime[i]);
            w_z[i] = 1.0 / g_ap;
            w_y[i] = q_obs_astar / (g_ap * r_obs_aprime);
        } else {
            w_mk[i] = 1.0 / (1.0 - g_ap);
        }
    }
    let factors = if stabilize {
        StabilizationFactors {
            y_weight_mean: mean(&w_y),
            z_weight_mean: mean(&w_z),
            mk_weight_mean: mean(&w_mk),
            stabilized: true,
        }
    } else {
        StabilizationFactors::unit()
    };

    let mut d_y = alloc::vec![0.0; n];
    let mut d_z = alloc::vec![0.0; n];
    let mut d_mk = alloc::vec![0.0; n];
    let mut d_l = alloc::vec![0.0; n];
    for i in 0..n {
        let wy = w_y[i] / factors.y_weight_mean;
        let wz = w_z[i] / factors.z_weight_mean;
        let wm = w_mk[i] / factors.mk_weight_mean;
        d_y[i] = wy * (table.y[i] - set.b_aprime[i]);
        d_z[i] = wz * (set.s_aprime[i] - set.v_aprime[i]);
        d_mk[i] = wm * (set.u1_aprime[i] - set.u0_aprime[i]) * (mk_col[i] - set.q1_astar[i]);
        d_l[i] = wy * (set.b_aprime[i] - set.lmean_aprime[i]);
    }

    Ok(EifTable {
        d_y,
        d_z,
        d_mk,
        d_l,
        v_term: set.v_aprime.clone(),
        factors,
    })
}

fn eif_theta_all(
    table: &ObservationTable,
    spec: &EstimandSpec,
    set: &NuisanceSet,
    stabilize: bool,
) -> Result<EifTable> {
    let n = table.n();
    check_columns(
        set,
        &[
            ("g_aprime", &set.g_aprime),
            ("b_aprime", &set.b_aprime),
            ("ratio_astar_aprime", &set.ratio_astar_aprime),
            ("u_astar", &set.u_astar),
        ],
        n,
    )?;

    let mut w_y = alloc::vec![0.0; n];
    let mut w_mk = alloc::vec![0.0; n];
    for i in 0..n {
        if table.a[i] == spec.arms.a_prime {
            // ratio_astar_aprime is the classifier ratio
            // p(a*|m,w)/p(a'|m,w) = [(1-g)/g] * p(m|a*,w)/p(m|a',w);
            // dividing by 1-g gives the efficient weight
            // p(m|a*,w)/(p(m|a',w) g).
            w_y[i] = set.ratio_astar_aprime[i] / (1.0 - set.g_aprime[i]);
        } else {
            w_mk[i] = 1.0 / (1.0 - set.g_aprime[i]);
        }
    }
    let factors = if stabilize {
        StabilizationFactors {
            y_weight_mean: mean(&w_y),
            z_weight_mean: 1.0,
            mk_weight_mean: mean(&w_mk),
            stabilized: true,
        }
    } else {
        StabilizationFactors::unit()
    };

    let mut d_y = alloc::vec![0.0; n];
    let mut d_mk = alloc::vec![0.0; n];
    for i in 0..n {
        let wy = w_y[i] / factors.y_weight_mean;
        let wm = w_mk[i] / factors.mk_weight_mean;
        d_y[i] = wy * (table.y[i] - set.b_aprime[i]);
        d_mk[i] = wm * (set.b_aprime[i] - set.u_astar[i]);
    }

    Ok(EifTable {
        d_y,
        d_z: alloc::vec![0.0; n],
        d_mk,
        d_l: alloc::vec![0.0; n],
        v_term: set.u_astar.clone(),
        factors,
    })
}

/// The mediator component in its general (non-binary-specialized) form:
/// `1{a = a*}/g(a*|w) * (u(a', m_k, w) - sum_m u(a', m, w) q(m | a*, w))`.
/// For binary M_k it coincides with the specialized form row by row.
pub fn d_mk_general(
    table: &ObservationTable,
    spec: &EstimandSpec,
    set: &NuisanceSet,
) -> Result<Vec<f64>> {
    let part = spec.partition.as_ref().ok_or_else(|| {
        Error::Invalid("mediator partition required for this estimand".into())
    })?;
    let mk_col = &table.mediators[part.k_index];
    let n = table.n();
    let mut out = alloc::vec![0.0; n];
    for i in 0..n {
        if table.a[i] != spec.arms.a_prime {
            let u_obs = if mk_col[i] == 1.0 { set.u1_aprime[i] } else { set.u0_aprime[i] };
            let u_mean =
                set.u1_aprime[i] * set.q1_astar[i] + set.u0_aprime[i] * (1.0 - set.q1_astar[i]);
            out[i] = (u_obs - u_mean) / (1.0 - set.g_aprime[i]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArmSpec, MediatorPartition};

    fn tiny_setup() -> (ObservationTable, EstimandSpec, NuisanceSet) {
        let y = alloc::vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let a = alloc::vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let w = alloc::vec![alloc::vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]];
        let z = alloc::vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let mk = alloc::vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let l = alloc::vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let table = ObservationTable::new(y, a, w, alloc::vec![z, mk, l]).unwrap();
        let spec = EstimandSpec::theta_k_prime(
            MediatorPartition {
                z_indices: alloc::vec![0],
                k_index: 1,
                l_indices: alloc::vec![2],
            },
            ArmSpec { a_prime: 1.0, a_star: 0.0 },
        );
        let mut set = NuisanceSet::zeroed(6, 0.01);
        for i in 0..6 {
            set.g_aprime[i] = 0.4 + 0.05 * i as f64;
            set.b_aprime[i] = 0.3 + 0.05 * i as f64;
            set.b_obs[i] = set.b_aprime[i];
            set.q1_astar[i] = 0.35 + 0.02 * i as f64;
            set.q1_aprime[i] = 0.45;
            set.r1_aprime[i] = 0.5 - 0.03 * i as f64;
            set.r1_astar[i] = 0.4;
            set.s_aprime[i] = 0.33;
            set.u1_aprime[i] = 0.5;
            set.u0_aprime[i] = 0.3 - 0.01 * i as f64;
            set.v_aprime[i] = 0.35;
            set.lmean_aprime[i] = 0.31;
        }
        (table, spec, set)
    }

    #[test]
    fn additivity_of_components() {
        let (table, spec, set) = tiny_setup();
        let eif = eif_components(&table, &spec, &set, false).unwrap();
        let theta = eif.one_step_theta();
        let total = eif.centered_total(theta);
        // By construction the centered total has exact sample mean zero.
        let m: f64 = total.iter().sum::<f64>() / total.len() as f64;
        assert!(m.abs() < 1e-14);
    }

    #[test]
    fn binary_mediator_form_matches_general_form() {
        let (table, spec, set) = tiny_setup();
        let eif = eif_components(&table, &spec, &set, false).unwrap();
        let general = d_mk_general(&table, &spec, &set).unwrap();
        for i in 0..table.n() {
            assert!((eif.d_mk[i] - general[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn stabilization_rescales_by_weight_means() {
        let (table, spec, set) = tiny_setup();
        let raw = eif_components(&table, &spec, &set, false).unwrap();
        let stab = eif_components(&table, &spec, &set, true).unwrap();
        assert!(stab.factors.stabilized);
        for i in 0..table.n() {
            assert!((stab.d_y[i] * stab.factors.y_weight_mean - raw.d_y[i]).abs() < 1e-12);
            assert!((stab.d_z[i] * stab.factors.z_weight_mean - raw.d_z[i]).abs() < 1e-12);
            assert!((stab.d_mk[i] * stab.factors.mk_weight_mean - raw.d_mk[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_structure_zeroes_off_arm_rows() {
        let (table, spec, set) = tiny_setup();
        let eif = eif_components(&table, &spec, &set, false).unwrap();
        for i in 0..table.n() {
            if table.a[i] == spec.arms.a_prime {
                assert_eq!(eif.d_mk[i], 0.0);
            } else {
                assert_eq!(eif.d_y[i], 0.0);
                assert_eq!(eif.d_z[i], 0.0);
                assert_eq!(eif.d_l[i], 0.0);
            }
        }
    }
}
