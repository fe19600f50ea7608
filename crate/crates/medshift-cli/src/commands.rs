//! The three commands: batch estimation over a grid, exact oracle queries,
//! and simulation studies.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use medshift_core::learners::Family;
use medshift_core::oracle::Corruption;
use medshift_core::{
    estimators, replicate, run_consistency_sweep, run_coverage_study, run_robustness_matrix,
    DiscreteLaw, EstimandKind, EstimateResult, EstimatorKind, ReplicateReport,
    RobustnessCondition, RobustnessScenario, SimReport,
};

use crate::config::{RunConfig, SimMode};
use crate::loader::{load_table, LoadedData};
use crate::output::{self, Manifest};
use crate::{plots, CliError};

/// Worker count for grid cells, from `MEDSHIFT_WORKERS` (default 1: grid
/// cells are deterministic either way, but single-threaded is the
/// reproducible-by-inspection baseline).
fn worker_count() -> usize {
    std::env::var("MEDSHIFT_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .unwrap_or(1)
}

/// One cell of the estimate grid.
struct Cell {
    folds: usize,
    estimator: EstimatorKind,
    kind: EstimandKind,
}

/// Per-seed summary stored in the sidecar file (the full per-row influence
/// vectors stay in the per-cell result file only for the aggregate).
#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    theta_hat: f64,
    se_theta: f64,
    iie_hat: Option<f64>,
    se_iie: Option<f64>,
    converged: bool,
}

#[derive(Serialize)]
struct Sidecar {
    per_seed: Vec<SeedSummary>,
    excluded: Vec<(u64, String)>,
    between_seed_sd_theta: f64,
}

fn run_cells<T: Send, F>(cells: &[Cell], work: F) -> Result<Vec<T>, CliError>
where
    F: Fn(&Cell) -> Result<T, CliError> + Sync,
{
    let workers = worker_count().min(cells.len().max(1));
    if workers <= 1 {
        return cells.iter().map(&work).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = work(&cells[i]);
                slots.lock().expect("worker panicked").as_mut_slice()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|slot| slot.expect("cell not computed"))
        .collect()
}

pub fn cmd_estimate(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let data_path = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("estimate requires a data path".into()))?;
    let schema = config
        .schema
        .as_ref()
        .ok_or_else(|| CliError::Config("estimate requires a schema".into()))?;
    let loaded: LoadedData = load_table(data_path, schema)?;
    let family = if loaded.table.y_is_binary() {
        Family::Binomial
    } else {
        Family::Gaussian
    };
    // Bind every requested estimand up front so all validation errors
    // surface before estimation work begins.
    let specs = config
        .estimands
        .iter()
        .map(|&k| loaded.estimand_spec(k))
        .collect::<Result<Vec<_>, _>>()?;
    let nuisance = config.nuisance(family);

    let mut cells = Vec::new();
    for &folds in &config.folds {
        for &estimator in &config.estimators {
            for &kind in &config.estimands {
                cells.push(Cell {
                    folds,
                    estimator,
                    kind,
                });
            }
        }
    }

    let reports: Vec<ReplicateReport> = run_cells(&cells, |cell| {
        let spec = specs[config
            .estimands
            .iter()
            .position(|&k| k == cell.kind)
            .expect("cell kind comes from the estimand list")]
        .clone();
        let pipeline = estimators::PipelineConfig {
            estimand: spec,
            estimator: cell.estimator,
            folds: cell.folds,
            seed: config.seeds[0],
            stratified: config.stratified,
            stabilize: config.stabilize,
            nuisance: nuisance.clone(),
        };
        replicate(&loaded.table, &pipeline, &config.seeds).map_err(CliError::from)
    })?;

    let mut manifest = Manifest::new("estimate", config, &config.seeds)?;
    let mut combined = String::from(output::COMBINED_HEADER);
    combined.push('\n');
    for (cell, report) in cells.iter().zip(&reports) {
        let stem = format!(
            "estimate_{}_{}_J{}",
            cell.kind.as_str(),
            match cell.estimator {
                EstimatorKind::OneStep => "one_step",
                EstimatorKind::Tml => "tml",
            },
            cell.folds
        );
        let cell_path = config.out.join(format!("{stem}.json"));
        output::write_json(&cell_path, &report.aggregate)?;
        manifest.record(&cell_path);

        let sidecar = Sidecar {
            per_seed: report
                .per_seed
                .iter()
                .map(|r| SeedSummary {
                    seed: r.seed,
                    theta_hat: r.theta_hat,
                    se_theta: r.se_theta,
                    iie_hat: r.iie_hat,
                    se_iie: r.se_iie,
                    converged: r.converged,
                })
                .collect(),
            excluded: report.excluded.clone(),
            between_seed_sd_theta: report.between_seed_sd_theta,
        };
        let sidecar_path = config.out.join(format!("{stem}_per_seed.json"));
        output::write_json(&sidecar_path, &sidecar)?;
        manifest.record(&sidecar_path);

        combined.push_str(&output::combined_row(&config.label, &report.aggregate)?);
        combined.push('\n');
    }
    let combined_path = config.out.join("combined.csv");
    output::write_text(&combined_path, &combined)?;
    manifest.record(&combined_path);
    manifest.write(&config.out)?;
    println!("wrote {} result cells to {}", cells.len(), config.out.display());
    Ok(())
}

/// Loads a law from a JSON file holding either a bare serialized law or a
/// fixture document with a top-level `law` field; `None` means the
/// canonical law shipped with the repository.
pub fn load_law(path: Option<&Path>) -> Result<DiscreteLaw, CliError> {
    let Some(path) = path else {
        return Ok(DiscreteLaw::canonical());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read law {}: {e}", path.display())))?;
    #[derive(serde::Deserialize)]
    struct Wrapper {
        law: DiscreteLaw,
    }
    let law = match serde_json::from_str::<Wrapper>(&text) {
        Ok(w) => w.law,
        Err(_) => serde_json::from_str::<DiscreteLaw>(&text)
            .map_err(|e| CliError::Config(format!("malformed law {}: {e}", path.display())))?,
    };
    law.validate()
        .map_err(|e| CliError::Config(format!("invalid law {}: {e}", path.display())))?;
    Ok(law)
}

#[derive(Serialize)]
pub struct OracleEstimand {
    pub estimand: &'static str,
    /// Exact value by direct enumeration of the identification formula.
    pub theta: f64,
    /// The same value by sequential conditional expectations.
    pub theta_double_enumeration: f64,
    pub iie: f64,
    /// Mean of the efficient influence function under the law (zero up to
    /// accumulation error).
    pub e_dp: f64,
    /// Variance of the efficient influence function: the nonparametric
    /// efficiency bound.
    pub var_dp: f64,
}

#[derive(Serialize)]
pub struct OracleReport {
    pub ey_aprime: f64,
    pub estimands: Vec<OracleEstimand>,
}

pub fn oracle_report(law: &DiscreteLaw) -> OracleReport {
    let ey = law.exact_ey_aprime();
    let estimands = [
        EstimandKind::ThetaKPrime,
        EstimandKind::ThetaK,
        EstimandKind::ThetaAll,
    ]
    .iter()
    .map(|&kind| {
        let theta = law.exact_theta(kind);
        OracleEstimand {
            estimand: kind.as_str(),
            theta,
            theta_double_enumeration: law.exact_theta_alt(kind),
            iie: ey - theta,
            e_dp: law.expected_one_step(kind, Corruption::none()) - theta,
            var_dp: law.exact_var_dp(kind),
        }
    })
    .collect();
    OracleReport {
        ey_aprime: ey,
        estimands,
    }
}

pub fn cmd_oracle(config: &RunConfig) -> Result<(), CliError> {
    let law = load_law(config.law.as_deref())?;
    let report = oracle_report(&law);
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Estimation(format!("serialization failed: {e}")))?;
    println!("{text}");
    let path = config.out.join("oracle.json");
    output::write_text(&path, &(text + "\n"))?;
    let mut manifest = Manifest::new("oracle", config, &[])?;
    manifest.record(&path);
    manifest.write(&config.out)
}

fn parse_condition(name: &str) -> Result<RobustnessCondition, CliError> {
    match name {
        "a" => Ok(RobustnessCondition::A),
        "b" => Ok(RobustnessCondition::B),
        "c" => Ok(RobustnessCondition::C),
        "d" => Ok(RobustnessCondition::D),
        "e" => Ok(RobustnessCondition::E),
        "none_satisfied" => Ok(RobustnessCondition::NoneSatisfied),
        other => Err(CliError::Config(format!(
            "unknown robustness condition {other:?} (expected a..e or none_satisfied)"
        ))),
    }
}

pub fn cmd_simulate(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let law = load_law(config.law.as_deref())?;
    // DiscreteLaw outcomes are Bernoulli draws from the b table.
    let nuisance = config.nuisance(Family::Binomial);
    let folds = config.folds[0];

    let mut report = SimReport::default();
    for &kind in &config.estimands {
        let part = match config.mode {
            SimMode::Consistency => run_consistency_sweep(
                &law,
                kind,
                &config.n_grid,
                config.reps,
                &config.estimators,
                folds,
                &nuisance,
                config.base_seed,
            )?,
            SimMode::Robustness => {
                let scenarios = config
                    .conditions
                    .iter()
                    .map(|name| {
                        parse_condition(name)
                            .map(|c| RobustnessScenario::table_row(law.clone(), c))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                run_robustness_matrix(&scenarios, kind, &config.n_grid, config.reps, config.base_seed)?
            }
            SimMode::Coverage => {
                let corruption = config.corrupted.then(Corruption::everything);
                let n = *config.n_grid.first().ok_or_else(|| {
                    CliError::Config("coverage mode needs one entry in n_grid".into())
                })?;
                run_coverage_study(
                    &law,
                    kind,
                    n,
                    config.reps,
                    &config.estimators,
                    folds,
                    &nuisance,
                    corruption,
                    config.base_seed,
                )?
            }
        };
        report.cells.extend(part.cells);
    }
    report.validate().map_err(CliError::from)?;

    let mut manifest = Manifest::new("simulate", config, &[config.base_seed])?;
    let csv_path = config.out.join("sim_report.csv");
    output::write_text(&csv_path, &output::sim_report_csv(&report))?;
    manifest.record(&csv_path);
    let json_path = config.out.join("sim_report.json");
    output::write_json(&json_path, &report)?;
    manifest.record(&json_path);
    if config.plots {
        let bias_path = config.out.join("bias_vs_n.svg");
        output::write_text(&bias_path, &plots::bias_vs_n(&report))?;
        manifest.record(&bias_path);
        let cov_path = config.out.join("coverage.svg");
        output::write_text(&cov_path, &plots::coverage_bars(&report))?;
        manifest.record(&cov_path);
    }
    manifest.write(&config.out)?;
    println!(
        "wrote {} simulation cells to {}",
        report.cells.len(),
        config.out.display()
    );
    Ok(())
}

/// Result of one grid cell, re-exported for integration tests.
pub use medshift_core::estimators::PipelineConfig;

// EstimateResult is referenced by the sidecar construction above.
#[allow(unused)]
fn _assert_result_is_serializable(r: &EstimateResult) -> String {
    serde_json::to_string(r).expect("EstimateResult serializes")
}
