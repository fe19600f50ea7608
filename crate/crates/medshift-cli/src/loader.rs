//! CSV ingestion: schema binding, validation, and deterministic
//! dummy-coding of categorical confounders.

use std::collections::BTreeSet;
use std::path::Path;

use medshift_core::{ArmSpec, EstimandKind, EstimandSpec, MediatorPartition, ObservationTable};

use crate::config::Schema;
use crate::CliError;

/// A loaded table plus everything needed to bind estimands to it.
pub struct LoadedData {
    pub table: ObservationTable,
    pub arms: ArmSpec,
    /// Mediator partition resolved to column indices, when the schema
    /// names one.
    pub partition: Option<MediatorPartition>,
    /// Expanded confounder column names (dummy columns get `name=level`).
    pub confounder_names: Vec<String>,
}

impl LoadedData {
    /// Binds an estimand kind, raising configuration errors for missing or
    /// inconsistent partitions before any estimation work begins.
    pub fn estimand_spec(&self, kind: EstimandKind) -> Result<EstimandSpec, CliError> {
        let k = self.table.n_mediators();
        let spec = match kind {
            EstimandKind::ThetaAll => EstimandSpec::theta_all(self.arms),
            EstimandKind::ThetaK => {
                let part = self.partition.as_ref().ok_or_else(|| {
                    CliError::Config("theta_k requires a mediator partition in the schema".into())
                })?;
                EstimandSpec::theta_k(part.k_index, k, self.arms)
            }
            EstimandKind::ThetaKPrime => {
                let part = self.partition.clone().ok_or_else(|| {
                    CliError::Config(
                        "theta_k_prime requires a mediator partition in the schema".into(),
                    )
                })?;
                EstimandSpec::theta_k_prime(part, self.arms)
            }
        };
        spec.validate(&self.table)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// One raw column as strings, in file order.
struct RawColumn {
    name: String,
    cells: Vec<String>,
}

fn parse_numeric(col: &RawColumn, role: &str) -> Result<Vec<f64>, CliError> {
    col.cells
        .iter()
        .enumerate()
        .map(|(row, cell)| {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(CliError::Config(format!(
                    "missing cell at row {row} in column {}",
                    col.name
                )));
            }
            cell.parse::<f64>().map_err(|_| {
                CliError::Config(format!(
                    "non-numeric value {cell:?} at row {row} in {role} column {}",
                    col.name
                ))
            })
        })
        .collect()
}

/// Numeric columns pass through; columns with any non-numeric cell are
/// treated as categorical and dummy-coded with lexicographic level order,
/// dropping the first level as the reference.
fn expand_confounder(col: &RawColumn) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    for (row, cell) in col.cells.iter().enumerate() {
        if cell.trim().is_empty() {
            return Err(CliError::Config(format!(
                "missing cell at row {row} in column {}",
                col.name
            )));
        }
    }
    if col.cells.iter().all(|c| c.trim().parse::<f64>().is_ok()) {
        return Ok(vec![(
            col.name.clone(),
            col.cells
                .iter()
                .map(|c| c.trim().parse::<f64>().unwrap())
                .collect(),
        )]);
    }
    let levels: BTreeSet<&str> = col.cells.iter().map(|c| c.trim()).collect();
    let mut out = Vec::new();
    for level in levels.iter().skip(1) {
        let dummy: Vec<f64> = col
            .cells
            .iter()
            .map(|c| if c.trim() == *level { 1.0 } else { 0.0 })
            .collect();
        out.push((format!("{}={}", col.name, level), dummy));
    }
    if out.is_empty() {
        // A single-level categorical column carries no information; emit a
        // constant so the design shape stays predictable.
        out.push((col.name.clone(), vec![0.0; col.cells.len()]));
    }
    Ok(out)
}

pub fn load_table(path: &Path, schema: &Schema) -> Result<LoadedData, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Config(format!("bad CSV header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let mut columns: Vec<RawColumn> = headers
        .iter()
        .map(|name| RawColumn {
            name: name.clone(),
            cells: Vec::new(),
        })
        .collect();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("bad CSV row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(CliError::Config(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for (col, cell) in columns.iter_mut().zip(record.iter()) {
            col.cells.push(cell.to_string());
        }
    }

    let find = |name: &str, role: &str| -> Result<&RawColumn, CliError> {
        columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| CliError::Config(format!("{role} column {name:?} not found in CSV")))
    };

    let y = parse_numeric(find(&schema.outcome, "outcome")?, "outcome")?;
    let a = parse_numeric(find(&schema.exposure, "exposure")?, "exposure")?;
    {
        let values: BTreeSet<u64> = a.iter().map(|v| v.to_bits()).collect();
        if values.len() != 2
            || !values.contains(&schema.a_prime.to_bits())
            || !values.contains(&schema.a_star.to_bits())
        {
            return Err(CliError::Config(
                "exposure must be binary and take exactly the configured arm values".into(),
            ));
        }
    }

    let mut w = Vec::new();
    let mut confounder_names = Vec::new();
    for name in &schema.confounders {
        for (expanded_name, col) in expand_confounder(find(name, "confounder")?)? {
            confounder_names.push(expanded_name);
            w.push(col);
        }
    }

    let mut mediators = Vec::new();
    for name in &schema.mediators {
        mediators.push(parse_numeric(find(name, "mediator")?, "mediator")?);
    }

    let table =
        ObservationTable::new(y, a, w, mediators).map_err(|e| CliError::Config(e.to_string()))?;

    let partition = match &schema.partition {
        None => None,
        Some(p) => {
            let index_of = |name: &String| -> Result<usize, CliError> {
                schema
                    .mediators
                    .iter()
                    .position(|m| m == name)
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "partition names mediator {name:?} absent from the mediator list"
                        ))
                    })
            };
            let part = MediatorPartition {
                z_indices: p.z.iter().map(index_of).collect::<Result<_, _>>()?,
                k_index: index_of(&p.k)?,
                l_indices: p.l.iter().map(index_of).collect::<Result<_, _>>()?,
            };
            part.validate(table.n_mediators())
                .map_err(|e| CliError::Config(e.to_string()))?;
            Some(part)
        }
    };

    Ok(LoadedData {
        table,
        arms: ArmSpec {
            a_prime: schema.a_prime,
            a_star: schema.a_star,
        },
        partition,
        confounder_names,
    })
}
