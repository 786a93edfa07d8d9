//! Report files. Column order and float rendering are fixed so reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::EvalReport;
use crate::error::{Error, Result};
use crate::fmt::{csv_field, sig6};
use crate::pca::write_pca_csv;

pub const RESULTS_CSV: &str = "results.csv";
pub const DELTA_CSV: &str = "delta_perf.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const PCA_CSV: &str = "pca.csv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut results = String::from("transfer_pair,config,with_agnostic,acc,auroc,ece\n");
    for r in &report.rows {
        results.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.transfer),
            csv_field(&r.config),
            r.with_agnostic,
            sig6(r.result.acc),
            sig6(r.result.auroc),
            sig6(r.result.ece)
        ));
    }
    write(dir, RESULTS_CSV, results, &mut written)?;

    let mut delta = String::from("transfer_pair,config,delta_acc,delta_auroc,delta_ece\n");
    for d in &report.delta_rows {
        delta.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&d.transfer),
            csv_field(&d.config),
            sig6(d.delta.acc),
            sig6(d.delta.auroc),
            sig6(d.delta.ece)
        ));
    }
    write(dir, DELTA_CSV, delta, &mut written)?;

    let mut ablation =
        String::from("transfer_pair,config,n,correct_turned_incorrect,new_correct\n");
    for a in &report.ablation_rows {
        ablation.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&a.transfer),
            csv_field(&a.config),
            a.counts.n,
            a.counts.correct_turned_incorrect,
            a.counts.new_correct
        ));
    }
    write(dir, ABLATION_CSV, ablation, &mut written)?;

    for s in &report.shap_tables {
        let mut buf = Vec::new();
        s.table.write_csv(&mut buf).map_err(|e| Error::io(dir, e))?;
        write(
            dir,
            &format!("shap_{}_{}.csv", s.dataset, s.config),
            buf,
            &mut written,
        )?;
    }

    let mut pca = Vec::new();
    write_pca_csv(report.pca.as_deref().unwrap_or(&[]), &mut pca).map_err(|e| Error::io(dir, e))?;
    write(dir, PCA_CSV, pca, &mut written)?;

    let doc = json!({
        "plan": report.plan,
        "inputs": report.inputs,
        "results": report.rows,
        "delta_perf": report.delta_rows,
        "ablation": report.ablation_rows,
        "ordering_checks": report.ordering_checks,
        "shap_files": report.shap_tables.iter()
            .map(|s| format!("shap_{}_{}.csv", s.dataset, s.config))
            .collect::<Vec<_>>(),
        "errors": report.errors,
    });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse {
        what: "report".into(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    write(dir, REPORT_JSON, text, &mut written)?;

    Ok(ReportFiles { written })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentPlan;
    use std::collections::BTreeMap;

    #[test]
    fn empty_report_has_headers_only() {
        let report = EvalReport {
            plan: ExperimentPlan::new(vec![], vec![], vec![]),
            inputs: BTreeMap::new(),
            rows: vec![],
            delta_rows: vec![],
            ablation_rows: vec![],
            ordering_checks: vec![],
            shap_tables: vec![],
            pca: None,
            errors: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(
            read(RESULTS_CSV),
            "transfer_pair,config,with_agnostic,acc,auroc,ece\n"
        );
        assert_eq!(read(DELTA_CSV).lines().count(), 1);
        assert_eq!(read(ABLATION_CSV).lines().count(), 1);
        assert_eq!(read(PCA_CSV), "dataset,sample_id,pc1,pc2\n");
        let json: serde_json::Value = serde_json::from_str(&read(REPORT_JSON)).unwrap();
        assert!(json["results"].as_array().unwrap().is_empty());
    }

    #[test]
    fn unwritable_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        let report = EvalReport {
            plan: ExperimentPlan::new(vec![], vec![], vec![]),
            inputs: BTreeMap::new(),
            rows: vec![],
            delta_rows: vec![],
            ablation_rows: vec![],
            ordering_checks: vec![],
            shap_tables: vec![],
            pca: None,
            errors: vec![],
        };
        assert!(emit_report(&report, file.join("sub")).is_err());
    }
}
