//! Acceptance suite: one test per acceptance criterion, each emitting a
//! single pass/fail line with its pinned tolerance. Everything is measured
//! against the exact enumeration oracle; no external data is required.

use std::time::Instant;

use medshift_core::data::partition_folds;
use medshift_core::eif::{d_mk_general, eif_components};
use medshift_core::learners::Family;
use medshift_core::nuisance::{Expansion, NuisanceConfig};
use medshift_core::oracle::Corruption;
use medshift_core::{
    estimators, run_consistency_sweep, run_coverage_study, run_robustness_matrix, DiscreteLaw,
    EstimandKind, EstimandSpec, EstimatorKind, MediatorPartition, RobustnessCondition,
    RobustnessScenario,
};

use medshift::output::combined_row;

const ALL_KINDS: [EstimandKind; 3] = [
    EstimandKind::ThetaKPrime,
    EstimandKind::ThetaK,
    EstimandKind::ThetaAll,
];

/// Prints the per-criterion verdict line, then enforces it.
fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {criterion} failed: {detail}");
}

/// A correctly specified stack on the discrete law: single GLMs over fully
/// interacted designs reproduce every conditional mean exactly as n grows.
fn well_specified() -> NuisanceConfig {
    let mut cfg = NuisanceConfig::glm(Family::Binomial);
    cfg.expansion = Expansion::Interactions;
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Criterion 1 — oracle identities: double enumeration of every estimand
/// agrees to 1e-14, probability tables marginalize exactly, and the mean
/// of each influence function under the law is zero to 1e-13, all in under
/// a second.
#[test]
fn criterion_1_oracle_identities() {
    let t0 = Instant::now();
    let law = DiscreteLaw::canonical();
    let mut max_enum_gap: f64 = 0.0;
    let mut max_edp: f64 = 0.0;
    for kind in ALL_KINDS {
        let direct = law.exact_theta(kind);
        let sequential = law.exact_theta_alt(kind);
        max_enum_gap = max_enum_gap.max((direct - sequential).abs());
        let e_dp = law.expected_one_step(kind, Corruption::none()) - direct;
        max_edp = max_edp.max(e_dp.abs());
    }
    // Marginalization identities: every conditional table sums to one.
    let mut max_marg: f64 = 0.0;
    for a in 0..2usize {
        for w in 0..law.nw() {
            let pz_sum: f64 = (0..law.nzc()).map(|z| law.pz_at(a, w, z)).sum();
            max_marg = max_marg.max((pz_sum - 1.0).abs());
            for z in 0..law.nzc() {
                for m in 0..2usize {
                    let pl_sum: f64 = (0..law.nlc()).map(|l| law.pl_at(a, w, z, m, l)).sum();
                    max_marg = max_marg.max((pl_sum - 1.0).abs());
                }
            }
        }
    }
    // Tower identity: q(1 | a, w) is the pz-mixture of r(1 | a, w, z).
    for a in 0..2usize {
        for w in 0..law.nw() {
            let mixed: f64 = (0..law.nzc())
                .map(|z| law.pz_at(a, w, z) * law.r1(a, w, z))
                .sum();
            max_marg = max_marg.max((mixed - law.q1(a, w)).abs());
        }
    }
    let elapsed = t0.elapsed();
    let pass =
        max_enum_gap <= 1e-14 && max_edp <= 1e-13 && max_marg <= 1e-14 && elapsed.as_secs() < 1;
    verdict(
        "1 (oracle identities)",
        pass,
        &format!(
            "double-enumeration gap {max_enum_gap:.2e} (tol 1e-14), |E[D_P]| {max_edp:.2e} \
             (tol 1e-13), marginalization gap {max_marg:.2e}, runtime {elapsed:?} (< 1 s)"
        ),
    );
}

/// Criterion 2 — reduction identities at n = 2000 on identical data and
/// folds: the flow-on estimand with no descendants equals the no-flow-on
/// estimand to 1e-10, and the no-flow-on estimand with a single mediator
/// equals the joint-shift estimand to 1e-10.
#[test]
fn criterion_2_reduction_identities() {
    let t0 = Instant::now();
    let cfg = well_specified();
    let mut worst: f64 = 0.0;
    let mut detail = String::new();

    // (i) theta_k_prime with L = (empty) vs theta_k, same table and plan.
    {
        let law = DiscreteLaw::canonical();
        let table = law.sample(2000, 21).unwrap();
        let plan = partition_folds(&table, 5, 21, false).unwrap();
        let k = table.n_mediators();
        let partition = MediatorPartition {
            z_indices: (0..k).filter(|&i| i != law.nz).collect(),
            k_index: law.nz,
            l_indices: vec![],
        };
        let spec_prime = EstimandSpec::theta_k_prime(partition, law.arms());
        let spec_k = EstimandSpec::theta_k(law.nz, k, law.arms());
        for estimator in [EstimatorKind::OneStep, EstimatorKind::Tml] {
            let run = |spec: &EstimandSpec| match estimator {
                EstimatorKind::OneStep => {
                    estimators::one_step(&table, spec, &plan, &cfg, true).unwrap()
                }
                EstimatorKind::Tml => estimators::tml(&table, spec, &plan, &cfg).unwrap(),
            };
            let gap = (run(&spec_prime).theta_hat - run(&spec_k).theta_hat).abs();
            worst = worst.max(gap);
            detail.push_str(&format!("k'(L=∅) vs k {}: {gap:.2e}; ", estimator.as_str()));
        }
    }

    // (ii) theta_k with Z = (empty) — a single binary mediator — vs
    // theta_all, same table and plan. The identity is pinned on the
    // one-step estimator: the targeted estimators parameterize the
    // mediator-side fluctuation differently (tilting the shifted mediator
    // density versus tilting its outcome projection), so their agreement
    // under the reduction is first-order, not exact.
    {
        let law = single_mediator_law();
        let table = law.sample(2000, 22).unwrap();
        let plan = partition_folds(&table, 5, 22, false).unwrap();
        let spec_k = EstimandSpec::theta_k(0, 1, law.arms());
        let spec_all = EstimandSpec::theta_all(law.arms());
        let run = |spec: &EstimandSpec| {
            estimators::one_step(&table, spec, &plan, &cfg, true).unwrap()
        };
        let gap = (run(&spec_k).theta_hat - run(&spec_all).theta_hat).abs();
        worst = worst.max(gap);
        detail.push_str(&format!("k(Z=∅) vs all One-step: {gap:.2e}; "));
    }
    let elapsed = t0.elapsed();
    let pass = worst <= 1e-10 && elapsed.as_secs() < 60;
    verdict(
        "2 (reduction identities)",
        pass,
        &format!("{detail}tol 1e-10, runtime {elapsed:?} (< 1 min)"),
    );
}

/// A law with a single binary mediator (no ancestors, no descendants).
fn single_mediator_law() -> DiscreteLaw {
    let nw = 2;
    let p_w = vec![0.55, 0.45];
    let g = vec![0.4, 0.6];
    let mut pz = Vec::new();
    let mut r = Vec::new();
    let mut pl = Vec::new();
    let mut b = Vec::new();
    for a in 0..2usize {
        for w in 0..nw {
            pz.push(1.0);
            r.push(0.3 + 0.25 * a as f64 + 0.15 * w as f64);
            for m in 0..2usize {
                pl.push(1.0);
                b.push(0.2 + 0.15 * a as f64 + 0.3 * m as f64 + 0.1 * w as f64);
            }
        }
    }
    let law = DiscreteLaw {
        p_w,
        g,
        pz,
        r,
        pl,
        b,
        nz: 0,
        nl: 0,
    };
    law.validate().unwrap();
    law
}

/// Criterion 3 — consistency and efficiency with the well-specified stack:
/// at n = 8000 over 200 replicates, |bias| is at most half the empirical
/// SE for both estimators on all three estimands, and the mean estimated
/// SE is within 10% of the enumerated efficiency bound sqrt(Var[D_P]/n).
#[test]
fn criterion_3_consistency_and_efficiency() {
    let law = DiscreteLaw::canonical();
    let cfg = well_specified();
    let n_grid = [500usize, 2000, 8000];
    let reps = 200;
    let estimators_ = [EstimatorKind::OneStep, EstimatorKind::Tml];
    let mut pass = true;
    let mut detail = String::new();
    for kind in ALL_KINDS {
        let report =
            run_consistency_sweep(&law, kind, &n_grid, reps, &estimators_, 5, &cfg, 9_000).unwrap();
        let bound = (law.exact_var_dp(kind) / 8000.0).sqrt();
        for cell in report.cells.iter().filter(|c| c.n == 8000) {
            let bias_ok = cell.bias.abs() <= 0.5 * cell.empirical_se;
            let se_rel = (cell.mean_estimated_se - bound).abs() / bound;
            let se_ok = se_rel <= 0.10;
            pass &= bias_ok && se_ok;
            detail.push_str(&format!(
                "{}/{}: |bias| {:.1e} vs 0.5·SE {:.1e}, SE within {:.1}% of bound; ",
                kind.as_str(),
                cell.estimator.as_str(),
                cell.bias.abs(),
                0.5 * cell.empirical_se,
                100.0 * se_rel
            ));
        }
    }
    verdict(
        "3 (consistency and efficiency)",
        pass,
        &format!("n=8000, 200 reps — {detail}tolerances: |bias| ≤ 0.5·empirical SE, SE within 10%"),
    );
}

/// Criterion 4 — multiple robustness: each single-corruption scenario
/// (table rows a–e) leaves |bias| ≤ 3·MC-SE at n = 8000, while corrupting
/// everything gives |bias| ≥ 5·MC-SE that matches the enumerated offset of
/// the corrupted estimating equation to 3·MC-SE.
#[test]
fn criterion_4_multiple_robustness() {
    let law = DiscreteLaw::canonical();
    let kind = EstimandKind::ThetaKPrime;
    let reps = 120;
    let scenarios: Vec<RobustnessScenario> = RobustnessCondition::all_rows()
        .into_iter()
        .chain([RobustnessCondition::NoneSatisfied])
        .map(|c| RobustnessScenario::table_row(law.clone(), c))
        .collect();
    let report = run_robustness_matrix(&scenarios, kind, &[8000], reps, 4_000).unwrap();
    let truth = law.exact_theta(kind);
    let offset = law.expected_one_step(kind, Corruption::everything()) - truth;
    let mut pass = true;
    let mut detail = String::new();
    for cell in &report.cells {
        if cell.scenario == "none_satisfied" {
            let big = cell.bias.abs() >= 5.0 * cell.mc_se_bias;
            let matches = (cell.bias - offset).abs() <= 3.0 * cell.mc_se_bias;
            pass &= big && matches;
            detail.push_str(&format!(
                "all-corrupted bias {:.4} (≥ 5·MC-SE {:.4}) vs enumerated offset {:.4} \
                 (within 3·MC-SE); ",
                cell.bias,
                5.0 * cell.mc_se_bias,
                offset
            ));
        } else {
            let ok = cell.bias.abs() <= 3.0 * cell.mc_se_bias;
            pass &= ok;
            detail.push_str(&format!(
                "row {} bias {:.1e} ≤ 3·MC-SE {:.1e}; ",
                cell.scenario,
                cell.bias.abs(),
                3.0 * cell.mc_se_bias
            ));
        }
    }
    verdict("4 (multiple robustness)", pass, &detail);
}

/// Criterion 5 — targeting: on every converged targeted fit the tilted
/// score means satisfy |mean d_y|, |mean d_mk| ≤ se/(√n·log n), and the
/// binary-mediator simplification of d_mk equals the general form row-wise
/// to 1e-12.
#[test]
fn criterion_5_tml_targeting() {
    let law = DiscreteLaw::canonical();
    let cfg = well_specified();
    let n = 2000usize;
    let mut pass = true;
    let mut worst_score: f64 = 0.0;
    let mut converged_runs = 0usize;
    for kind in ALL_KINDS {
        let spec = law.estimand_spec(kind);
        for seed in 0..8u64 {
            let table = law.sample(n, 100 + seed).unwrap();
            let plan = partition_folds(&table, 5, 100 + seed, false).unwrap();
            let res = estimators::tml(&table, &spec, &plan, &cfg).unwrap();
            if !res.converged {
                continue;
            }
            converged_runs += 1;
            let fluct = res.diagnostics.tml.as_ref().expect("targeted run");
            let budget = res.se_theta / ((n as f64).sqrt() * (n as f64).ln());
            let score = fluct.score_y.abs().max(fluct.score_mk.abs());
            worst_score = worst_score.max(score / budget);
            pass &= score <= budget;
        }
    }
    // Row-wise agreement of the simplified and general mediator components
    // on exact nuisances.
    let mut worst_gap: f64 = 0.0;
    for kind in [EstimandKind::ThetaKPrime, EstimandKind::ThetaK] {
        let spec = law.estimand_spec(kind);
        let table = law.sample(4000, 5).unwrap();
        let set = law.inject(&table, kind, Corruption::none()).unwrap();
        let eif = eif_components(&table, &spec, &set, false).unwrap();
        let general = d_mk_general(&table, &spec, &set).unwrap();
        for (a, b) in eif.d_mk.iter().zip(&general) {
            worst_gap = worst_gap.max((a - b).abs());
        }
    }
    pass &= worst_gap <= 1e-12 && converged_runs > 0;
    verdict(
        "5 (targeted score zeroing)",
        pass,
        &format!(
            "{converged_runs} converged runs, worst score/budget ratio {worst_score:.3} \
             (≤ 1), simplified-vs-general d_mk gap {worst_gap:.2e} (tol 1e-12)"
        ),
    );
}

/// Criterion 6 — estimating equation: the stored influence function at the
/// one-step estimate averages to zero to 1e-10, and stabilized weights
/// average to one.
#[test]
fn criterion_6_estimating_equation() {
    let law = DiscreteLaw::canonical();
    let cfg = well_specified();
    let mut worst_mean: f64 = 0.0;
    for kind in ALL_KINDS {
        let spec = law.estimand_spec(kind);
        let table = law.sample(2000, 31).unwrap();
        let plan = partition_folds(&table, 5, 31, false).unwrap();
        let res = estimators::one_step(&table, &spec, &plan, &cfg, true).unwrap();
        worst_mean = worst_mean.max(mean(&res.eif_theta).abs());
    }
    // Stabilized weights: reconstruct the raw inverse-probability weights
    // from exact nuisances and stabilize them by their empirical mean.
    let table = law.sample(2000, 32).unwrap();
    let set = law
        .inject(&table, EstimandKind::ThetaKPrime, Corruption::none())
        .unwrap();
    let spec = law.estimand_spec(EstimandKind::ThetaKPrime);
    let part = spec.partition.as_ref().unwrap();
    let mk = &table.mediators[part.k_index];
    let n = table.n();
    let mut w_y = vec![0.0; n];
    let mut w_z = vec![0.0; n];
    let mut w_mk = vec![0.0; n];
    for i in 0..n {
        if table.a[i] == spec.arms.a_prime {
            let q = if mk[i] == 1.0 { set.q1_astar[i] } else { 1.0 - set.q1_astar[i] };
            let r = if mk[i] == 1.0 { set.r1_aprime[i] } else { 1.0 - set.r1_aprime[i] };
            w_z[i] = 1.0 / set.g_aprime[i];
            w_y[i] = q / (set.g_aprime[i] * r);
        } else {
            w_mk[i] = 1.0 / (1.0 - set.g_aprime[i]);
        }
    }
    let mut worst_weight: f64 = 0.0;
    for w in [&w_y, &w_z, &w_mk] {
        let m = mean(w);
        let stabilized: Vec<f64> = w.iter().map(|&x| x / m).collect();
        worst_weight = worst_weight.max((mean(&stabilized) - 1.0).abs());
    }
    let pass = worst_mean <= 1e-10 && worst_weight <= 1e-13;
    verdict(
        "6 (estimating equation)",
        pass,
        &format!(
            "|mean EIF at one-step estimate| {worst_mean:.2e} (tol 1e-10), stabilized weight \
             mean deviation {worst_weight:.2e} (tol 1e-13)"
        ),
    );
}

/// Criterion 7 — coverage: 95% Wald intervals cover the enumerated truth
/// in [0.92, 0.975] of 500 well-specified replicates at n = 2000 for both
/// estimators, and the all-corrupted scenario degrades below 0.90.
#[test]
fn criterion_7_coverage() {
    let law = DiscreteLaw::canonical();
    let cfg = well_specified();
    let kind = EstimandKind::ThetaKPrime;
    let reps = 500;
    let well = run_coverage_study(
        &law,
        kind,
        2000,
        reps,
        &[EstimatorKind::OneStep, EstimatorKind::Tml],
        5,
        &cfg,
        None,
        7_000,
    )
    .unwrap();
    let corrupted = run_coverage_study(
        &law,
        kind,
        2000,
        reps,
        &[EstimatorKind::OneStep],
        5,
        &cfg,
        Some(Corruption::everything()),
        7_000,
    )
    .unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for cell in &well.cells {
        let ok = (0.92..=0.975).contains(&cell.coverage);
        pass &= ok;
        detail.push_str(&format!(
            "{} coverage {:.3} (target [0.92, 0.975]); ",
            cell.estimator.as_str(),
            cell.coverage
        ));
    }
    let bad = &corrupted.cells[0];
    pass &= bad.coverage < 0.90;
    detail.push_str(&format!("all-corrupted coverage {:.3} (< 0.90)", bad.coverage));
    verdict("7 (interval coverage)", pass, &detail);
}

/// Criterion 8 — schema fidelity: the combined-CSV renderer reproduces the
/// published fixture row byte-exactly from a stored estimate.
#[test]
fn criterion_8_schema_fidelity() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/supp_table2_row.json"
    );
    let text = std::fs::read_to_string(path).unwrap();
    let stored: estimators::EstimateResult = serde_json::from_str(&text).unwrap();
    let row = combined_row("0.5", &stored).unwrap();
    let expected = "10,One-step,0.5,theta_all,0.074,0.029,0.018,0.131";
    let pass = row == expected;
    verdict(
        "8 (schema fidelity)",
        pass,
        &format!("rendered {row:?}, expected {expected:?} (byte-exact)"),
    );
}
