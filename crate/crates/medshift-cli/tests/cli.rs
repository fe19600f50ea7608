//! End-to-end tests of the command-line surface: grid shape, manifest and
//! report emission, exit codes, and byte-exact reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

use medshift_core::{DiscreteLaw, ObservationTable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medshift"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("medshift-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Renders a sampled table as a CSV with the canonical-law column layout
/// (one confounder, ancestor mediator, mediator of interest, descendant).
fn write_csv(path: &Path, table: &ObservationTable) {
    let mut text = String::from("y,a,w1,z1,mk,l1\n");
    for i in 0..table.n() {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            table.y[i],
            table.a[i],
            table.w[0][i],
            table.mediators[0][i],
            table.mediators[1][i],
            table.mediators[2][i]
        ));
    }
    std::fs::write(path, text).unwrap();
}

fn estimate_config(data: &Path, out: &Path) -> String {
    format!(
        r#"{{
  "data": {data:?},
  "schema": {{
    "outcome": "y", "exposure": "a",
    "confounders": ["w1"],
    "mediators": ["z1", "mk", "l1"],
    "partition": {{ "z": ["z1"], "k": "mk", "l": ["l1"] }}
  }},
  "estimands": ["theta_all", "theta_k", "theta_k_prime"],
  "estimators": ["one_step", "tml"],
  "folds": [5, 10],
  "seeds": [1, 2],
  "stack": "glm",
  "out": {out:?}
}}"#
    )
}

#[test]
fn estimate_grid_matches_table_shape_and_writes_manifest() {
    let dir = scratch("grid");
    let law = DiscreteLaw::canonical();
    let table = law.sample(400, 5).unwrap();
    let data = dir.join("data.csv");
    write_csv(&data, &table);
    let out = dir.join("out");
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, estimate_config(&data, &out)).unwrap();

    let status = bin().args(["estimate", "--config"]).arg(&cfg_path).status().unwrap();
    assert!(status.success());

    let combined = std::fs::read_to_string(out.join("combined.csv")).unwrap();
    let lines: Vec<&str> = combined.lines().collect();
    assert_eq!(lines[0], "folds,estimator,label,estimand,IIE,SE,CIlow,CIupp");
    // 3 estimands x 2 estimators x 2 fold counts = 12 result rows.
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("5,One-step,0.5,theta_all,"));
    assert!(lines[12].starts_with("10,TML,0.5,theta_k_prime,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    // 12 cells x (result + per-seed sidecar) + combined CSV.
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 25);

    // Per-seed sidecar carries both seeds.
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("estimate_theta_all_one_step_J5_per_seed.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["per_seed"].as_array().unwrap().len(), 2);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_errors_exit_2_and_name_the_problem() {
    let dir = scratch("cfg-errors");
    let law = DiscreteLaw::canonical();
    let table = law.sample(60, 6).unwrap();
    let data = dir.join("data.csv");
    write_csv(&data, &table);

    // Schema names a column absent from the CSV.
    let bad = estimate_config(&data, &dir.join("out")).replace("\"w1\"", "\"nope\"");
    let cfg_path = dir.join("bad.json");
    std::fs::write(&cfg_path, bad).unwrap();
    let output = bin().args(["estimate", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nope"), "stderr names the column: {stderr}");

    // Missing cell: the error names the row and column. Blank out the w1
    // cell of data row 3 (line 4 of the file).
    let csv = std::fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = csv.lines().map(|l| l.to_string()).collect();
    let fields: Vec<&str> = lines[4].split(',').collect();
    lines[4] = format!("{},{},,{},{},{}", fields[0], fields[1], fields[3], fields[4], fields[5]);
    std::fs::write(&data, lines.join("\n")).unwrap();
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, estimate_config(&data, &dir.join("out"))).unwrap();
    let output = bin().args(["estimate", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("row 3") && stderr.contains("w1"),
        "stderr names row and column: {stderr}"
    );

    // Malformed law file for the oracle command.
    let law_path = dir.join("law.json");
    std::fs::write(&law_path, "{ not json").unwrap();
    let cfg_path = dir.join("oracle.json");
    std::fs::write(&cfg_path, format!(r#"{{ "law": {law_path:?}, "out": {:?} }}"#, dir.join("out"))).unwrap();
    let output = bin().args(["oracle", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn estimation_errors_exit_3() {
    let dir = scratch("est-errors");
    // Both arms present (validation passes) but one arm has a single row,
    // so estimation cannot proceed.
    let csv = "y,a,w1,z1,mk,l1\n1,1,0,0,1,0\n0,0,0,1,0,1\n1,0,1,0,1,0\n0,0,1,1,0,1\n\
               1,0,0,0,0,0\n0,0,1,0,1,1\n1,0,0,1,1,0\n0,0,1,1,1,1\n";
    let data = dir.join("data.csv");
    std::fs::write(&data, csv).unwrap();
    let cfg = estimate_config(&data, &dir.join("out"))
        .replace("[5, 10]", "[2]")
        .replace("\"one_step\", \"tml\"", "\"one_step\"");
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, cfg).unwrap();
    let output = bin().args(["estimate", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn oracle_defaults_to_the_canonical_law_and_pins_frozen_values() {
    let dir = scratch("oracle");
    let output = bin().args(["oracle", "--out"]).arg(dir.join("out")).output().unwrap();
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!((report["ey_aprime"].as_f64().unwrap() - 0.55941).abs() < 1e-13);
    let first = &report["estimands"][0];
    assert_eq!(first["estimand"], "theta_k_prime");
    assert!((first["theta"].as_f64().unwrap() - 0.50191).abs() < 1e-13);
    assert!(first["e_dp"].as_f64().unwrap().abs() < 1e-13);
    // Matches the repo-pinned fixture.
    let fixture: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/canonical_law.json"
        ))
        .unwrap(),
    )
    .unwrap();
    assert!(
        (first["theta"].as_f64().unwrap() - fixture["frozen"]["theta_k_prime"].as_f64().unwrap())
            .abs()
            < 1e-14
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = scratch("simulate");
    let cfg = |out: &Path| {
        format!(
            r#"{{
  "mode": "consistency",
  "estimands": ["theta_all"],
  "estimators": ["one_step"],
  "n_grid": [300, 600],
  "reps": 4,
  "folds": [2],
  "stack": "glm",
  "base_seed": 11,
  "plots": true,
  "out": {out:?}
}}"#
        )
    };
    let out1 = dir.join("run1");
    let out2 = dir.join("run2");
    for out in [&out1, &out2] {
        let cfg_path = dir.join(format!("{}.json", out.file_name().unwrap().to_string_lossy()));
        std::fs::write(&cfg_path, cfg(out)).unwrap();
        let status = bin().args(["simulate", "--config"]).arg(&cfg_path).status().unwrap();
        assert!(status.success());
    }
    for file in ["sim_report.csv", "sim_report.json", "bias_vs_n.svg", "coverage.svg"] {
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    // The CSV has one row per (n, estimator) cell.
    let csv = std::fs::read_to_string(out1.join("sim_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let _ = std::fs::remove_dir_all(&dir);
}
