//! Deterministic report serialization. The ladder CSV schema is frozen:
//!
//! ```text
//! epsilon,g_hat,se,abs_err,sup_ytilde_ratio,prop32_y,prop32_z,flags
//! ```
//!
//! with every numeric field printed as `{:.12e}`, so byte-identical inputs
//! produce byte-identical files on every platform.

use std::path::Path;

use crate::error::Result;
use crate::generator::compliance::ComplianceReport;
use crate::harness::RepresentationReport;
use crate::oracles::OracleRow;

pub const LADDER_CSV_HEADER: &str =
    "epsilon,g_hat,se,abs_err,sup_ytilde_ratio,prop32_y,prop32_z,flags";

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn representation_csv(report: &RepresentationReport) -> String {
    let mut out = String::with_capacity(128 * (report.rows.len() + 1));
    out.push_str(LADDER_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            num(r.epsilon),
            num(r.g_hat),
            num(r.se),
            num(r.abs_err),
            num(r.sup_ytilde_ratio),
            num(r.prop32_y),
            num(r.prop32_z),
            r.flags
        ));
    }
    out
}

/// Full verdict blob: rows with diagnostics, checks, fitted order, verdict.
pub fn representation_json(report: &RepresentationReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub const ORACLE_CSV_HEADER: &str = "name,expected,estimate,se,abs_err,tolerance,passed";

pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::new();
    out.push_str(ORACLE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            num(r.expected),
            num(r.estimate),
            num(r.se),
            num(r.abs_err),
            num(r.tolerance),
            r.passed
        ));
    }
    out
}

pub fn compliance_json(reports: &[ComplianceReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    Ok(s)
}

/// Writes `representation.csv` and `representation.json` into `out_dir`,
/// creating it if needed.
pub fn write_representation_files(out_dir: &Path, report: &RepresentationReport) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("representation.csv"), representation_csv(report))?;
    std::fs::write(out_dir.join("representation.json"), representation_json(report)?)?;
    Ok(())
}

pub fn write_oracle_files(out_dir: &Path, rows: &[OracleRow]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("oracles.csv"), oracle_csv(rows))?;
    let mut s = serde_json::to_string_pretty(rows)?;
    s.push('\n');
    std::fs::write(out_dir.join("oracles.json"), s)?;
    Ok(())
}

pub fn write_compliance_files(out_dir: &Path, reports: &[ComplianceReport]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("compliance.json"), compliance_json(reports)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::families::{build_family, FamilyConfig};
    use crate::harness::{
        run_representation, EpsilonLadder, LadderRung, Mode, RepresentationProblem, RunOptions,
    };
    use crate::solver::SolverConfig;

    fn tiny_report() -> RepresentationReport {
        let spec = build_family(&FamilyConfig::PureQuadratic { gamma: 0.5 }, 1).unwrap();
        let problem = RepresentationProblem::new(spec, 0.0, 0.2, vec![0.5], Mode::L1).unwrap();
        let ladder = EpsilonLadder {
            rungs: vec![
                LadderRung {
                    epsilon: 0.0625,
                    steps: 8,
                    n_paths: 1000,
                },
                LadderRung {
                    epsilon: 0.03125,
                    steps: 8,
                    n_paths: 1000,
                },
            ],
        };
        run_representation(
            &problem,
            &ladder,
            &SolverConfig::default(),
            &RunOptions {
                seed: 3,
                ..RunOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn csv_layout_is_frozen() {
        let report = tiny_report();
        let csv = representation_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), LADDER_CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 8);
        assert_eq!(first[0], "6.250000000000e-2");
        // Numeric fields parse back.
        for f in &first[..7] {
            f.parse::<f64>().unwrap();
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let a = tiny_report();
        let b = tiny_report();
        assert_eq!(representation_csv(&a), representation_csv(&b));
        assert_eq!(
            representation_json(&a).unwrap(),
            representation_json(&b).unwrap()
        );
    }

    #[test]
    fn files_land_in_out_dir() {
        let report = tiny_report();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/run1");
        write_representation_files(&out, &report).unwrap();
        let csv = std::fs::read_to_string(out.join("representation.csv")).unwrap();
        assert!(csv.starts_with(LADDER_CSV_HEADER));
        let json = std::fs::read_to_string(out.join("representation.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v.get("verdict").is_some());
        assert!(v.get("rows").is_some());
    }
}
