//! Experiment orchestration: transfer pairs x configurations x {with, without}
//! agnostic features, plus SHAP tables and PCA projections.

mod plan;
mod report;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use plan::{ExperimentPlan, TransferPair};
pub use report::{emit_report, ReportFiles};
pub use synth::{synth_generate, task_name, SynthSpec};

use crate::assembly::{AssemblyConfig, FittedAssembly, Mode, SourcePart};
use crate::dataset::{content_digest, load_bundle, make_split, DatasetBundle, SplitAssignment};
use crate::error::{Error, Result};
use crate::forest::{self, ForestParams};
use crate::labeling::{binarize, labels_for};
use crate::metrics::{
    ablation_counts, delta_perf, evaluate, AblationCounts, DeltaPerf, EvalResult,
};
use crate::par::*;
use crate::pca::{project_datasets, PcaPoint};
use crate::shap::{mean_abs_table, shap_forest, ShapTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub transfer: String,
    pub config: String,
    pub mode: Mode,
    pub with_agnostic: bool,
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub transfer: String,
    pub config: String,
    pub mode: Mode,
    pub delta: DeltaPerf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub transfer: String,
    pub config: String,
    pub counts: AblationCounts,
}

/// Whether ΔAcc(selected) >= ΔAcc(one_layer) >= ΔAcc(multi_layer) held.
/// `None` when the transfer lacks one of the three modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub transfer: String,
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub transfer: String,
    pub config: String,
    pub with_agnostic: Option<bool>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedShapTable {
    pub dataset: String,
    pub config: String,
    pub table: ShapTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub plan: ExperimentPlan,
    /// Dataset name to content digest.
    pub inputs: BTreeMap<String, String>,
    pub rows: Vec<ResultRow>,
    pub delta_rows: Vec<DeltaRow>,
    pub ablation_rows: Vec<AblationRow>,
    pub ordering_checks: Vec<OrderingCheck>,
    pub shap_tables: Vec<NamedShapTable>,
    pub pca: Option<Vec<PcaPoint>>,
    pub errors: Vec<CellError>,
}

impl EvalReport {
    pub fn row(&self, transfer: &str, config: &str, with_agnostic: bool) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.transfer == transfer && r.config == config && r.with_agnostic == with_agnostic
        })
    }

    /// Recomputes every delta and ablation identity from the paired rows.
    pub fn check_consistency(&self) -> Result<()> {
        for d in &self.delta_rows {
            let (Some(w), Some(wo)) = (
                self.row(&d.transfer, &d.config, true),
                self.row(&d.transfer, &d.config, false),
            ) else {
                return Err(Error::Validation(format!(
                    "delta row {} / {} lacks its result pair",
                    d.transfer, d.config
                )));
            };
            if delta_perf(&w.result, &wo.result)? != d.delta {
                return Err(Error::Validation(format!(
                    "delta row {} / {} does not match its pair",
                    d.transfer, d.config
                )));
            }
        }
        for a in &self.ablation_rows {
            let (Some(w), Some(wo)) = (
                self.row(&a.transfer, &a.config, true),
                self.row(&a.transfer, &a.config, false),
            ) else {
                return Err(Error::Validation(format!(
                    "ablation row {} / {} lacks its result pair",
                    a.transfer, a.config
                )));
            };
            if !a.counts.consistent_with(&w.result, &wo.result) {
                return Err(Error::Validation(format!(
                    "ablation identity fails for {} / {}",
                    a.transfer, a.config
                )));
            }
        }
        Ok(())
    }
}

struct Prepared<'a> {
    bundle: &'a DatasetBundle,
    labels: Vec<f64>,
    split: SplitAssignment,
}

struct CellOutput {
    result: EvalResult,
    scores: Vec<f64>,
    truth: Vec<f64>,
    shap: Option<ShapTable>,
}

/// Loads every dataset named by the plan and runs it.
pub fn run_plan_from_disk(plan: &ExperimentPlan) -> Result<EvalReport> {
    plan.validate()?;
    let mut bundles = BTreeMap::new();
    for name in &plan.datasets {
        let b = load_bundle(plan.dataset_dir(name))?;
        if b.name() != name {
            return Err(Error::Validation(format!(
                "directory for {name:?} holds dataset {:?}",
                b.name()
            )));
        }
        bundles.insert(name.clone(), b);
    }
    run_plan(plan, &bundles)
}

/// Runs every cell of `plan` against in-memory bundles keyed by dataset name.
///
/// Cell failures are collected in [`EvalReport::errors`]; plan-level problems
/// (unknown datasets, mixed task types) fail the whole call.
pub fn run_plan(
    plan: &ExperimentPlan,
    bundles: &BTreeMap<String, DatasetBundle>,
) -> Result<EvalReport> {
    plan.validate()?;
    let mut prepared: BTreeMap<&str, Prepared<'_>> = BTreeMap::new();
    let mut inputs = BTreeMap::new();
    for name in &plan.datasets {
        let bundle = bundles
            .get(name)
            .ok_or_else(|| Error::invalid(format!("dataset {name:?} not provided")))?;
        if let Some(first) = prepared.values().next() {
            let (a, b) = (first.bundle.task_type(), bundle.task_type());
            if a != b {
                return Err(Error::TaskMismatch {
                    left: format!("{a} ({})", first.bundle.name()),
                    right: format!("{b} ({name})"),
                });
            }
            if first.bundle.manifest.hidden_dim != bundle.manifest.hidden_dim {
                return Err(Error::Shape(format!(
                    "hidden_dim {} ({}) vs {} ({name})",
                    first.bundle.manifest.hidden_dim,
                    first.bundle.name(),
                    bundle.manifest.hidden_dim
                )));
            }
        }
        inputs.insert(name.clone(), content_digest(bundle)?);
        prepared.insert(
            name,
            Prepared {
                bundle,
                labels: labels_for(bundle)?,
                split: make_split(bundle.n_samples(), plan.seed, plan.train_fraction)?,
            },
        );
    }

    let forest_params = ForestParams {
        seed: plan.seed,
        ..plan.forest.clone()
    };
    let jobs: Vec<(&TransferPair, &AssemblyConfig, bool)> = plan
        .transfers
        .iter()
        .flat_map(|t| {
            plan.configs
                .iter()
                .flat_map(move |c| [(t, c, false), (t, c, true)])
        })
        .collect();

    let outputs: Vec<Result<CellOutput>> = jobs
        .par_iter()
        .map(|&(t, c, agn)| {
            let cfg = c.clone().with_agnostic(agn);
            run_cell(plan, &prepared, t, &cfg, &forest_params)
        })
        .collect();

    let mut report = EvalReport {
        plan: plan.clone(),
        inputs,
        rows: Vec::new(),
        delta_rows: Vec::new(),
        ablation_rows: Vec::new(),
        ordering_checks: Vec::new(),
        shap_tables: Vec::new(),
        pca: None,
        errors: Vec::new(),
    };

    let mut outputs = outputs.into_iter();
    for t in &plan.transfers {
        let transfer = t.label();
        let mut deltas: BTreeMap<Mode, f64> = BTreeMap::new();
        for c in &plan.configs {
            let config = c.label();
            let without = outputs.next().expect("one output per job");
            let with = outputs.next().expect("one output per job");
            let mut pair = Vec::new();
            for (flag, out) in [(false, without), (true, with)] {
                match out {
                    Ok(o) => {
                        report.rows.push(ResultRow {
                            transfer: transfer.clone(),
                            config: config.clone(),
                            mode: c.mode,
                            with_agnostic: flag,
                            result: o.result,
                        });
                        if let Some(table) = &o.shap {
                            report.shap_tables.push(NamedShapTable {
                                dataset: t.test.clone(),
                                config: config.clone(),
                                table: table.clone(),
                            });
                        }
                        pair.push(o);
                    }
                    Err(e) => report.errors.push(CellError {
                        transfer: transfer.clone(),
                        config: config.clone(),
                        with_agnostic: Some(flag),
                        message: e.to_string(),
                    }),
                }
            }
            if let [wo, w] = pair.as_slice() {
                let summary = delta_perf(&w.result, &wo.result).and_then(|d| {
                    Ok((
                        d,
                        ablation_counts(&wo.scores, &w.scores, &wo.truth, plan.threshold)?,
                    ))
                });
                match summary {
                    Ok((delta, counts)) => {
                        deltas.entry(c.mode).or_insert(delta.acc);
                        report.delta_rows.push(DeltaRow {
                            transfer: transfer.clone(),
                            config: config.clone(),
                            mode: c.mode,
                            delta,
                        });
                        report.ablation_rows.push(AblationRow {
                            transfer: transfer.clone(),
                            config: config.clone(),
                            counts,
                        });
                    }
                    Err(e) => report.errors.push(CellError {
                        transfer: transfer.clone(),
                        config: config.clone(),
                        with_agnostic: None,
                        message: e.to_string(),
                    }),
                }
            }
        }
        let holds = match (
            deltas.get(&Mode::Selected),
            deltas.get(&Mode::OneLayer),
            deltas.get(&Mode::MultiLayer),
        ) {
            (Some(s), Some(o), Some(m)) => Some(s >= o && o >= m),
            _ => None,
        };
        report
            .ordering_checks
            .push(OrderingCheck { transfer, holds });
    }

    if plan.pca && !plan.datasets.is_empty() {
        match project_datasets(
            &plan
                .datasets
                .iter()
                .map(|n| prepared[n.as_str()].bundle)
                .collect::<Vec<_>>(),
            plan.pca_layer,
        ) {
            Ok(points) => report.pca = Some(points),
            Err(e) => report.errors.push(CellError {
                transfer: "pca".into(),
                config: format!("layer {}", plan.pca_layer),
                with_agnostic: None,
                message: e.to_string(),
            }),
        }
    }
    Ok(report)
}

fn run_cell(
    plan: &ExperimentPlan,
    prepared: &BTreeMap<&str, Prepared<'_>>,
    transfer: &TransferPair,
    config: &AssemblyConfig,
    params: &ForestParams,
) -> Result<CellOutput> {
    let parts: Vec<SourcePart<'_>> = transfer
        .train
        .iter()
        .map(|name| {
            let p = &prepared[name.as_str()];
            SourcePart {
                bundle: p.bundle,
                labels: &p.labels,
                rows: &p.split.train_ids,
            }
        })
        .collect();
    let fitted = FittedAssembly::fit(config, &parts)?;
    let train_view = crate::assembly::FeatureView::concat(
        parts
            .iter()
            .map(|p| fitted.apply(p.bundle, p.labels, p.rows))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let target = &prepared[transfer.test.as_str()];
    let test_view = fitted.apply(target.bundle, &target.labels, &target.split.test_ids)?;

    let model = forest::train(&train_view.x, &train_view.y, params)?;
    let scores = model.predict(&test_view.x)?;
    let truth = binarize(&test_view.y, plan.threshold);
    let result = evaluate(&scores, &truth, plan.threshold, plan.bins)?;

    let shap = if plan.shap && transfer.is_in_domain() && config.include_agnostic {
        let attribs = shap_forest(&model, &test_view.x)?;
        Some(mean_abs_table(&attribs, test_view.agnostic_start)?)
    } else {
        None
    };
    Ok(CellOutput {
        result,
        scores,
        truth,
        shap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TaskType;

    fn bundles(n_tasks: usize, gamma: f64) -> BTreeMap<String, DatasetBundle> {
        synth_generate(&SynthSpec {
            n_per_task: 120,
            hidden_dim: 8,
            n_tasks,
            gamma,
            layers: (13..=17).collect(),
            ..Default::default()
        })
        .unwrap()
        .into_iter()
        .map(|b| (b.name().to_string(), b))
        .collect()
    }

    fn quick_plan(
        datasets: &[&str],
        transfers: &[&str],
        configs: Vec<AssemblyConfig>,
    ) -> ExperimentPlan {
        let mut plan = ExperimentPlan::new(
            datasets.iter().map(|s| s.to_string()).collect(),
            transfers
                .iter()
                .map(|t| TransferPair::parse(t).unwrap())
                .collect(),
            configs,
        );
        plan.forest.n_trees = 15;
        plan
    }

    #[test]
    fn in_domain_cell_counting() {
        let plan = quick_plan(
            &["task0"],
            &["task0"],
            vec![AssemblyConfig::new(Mode::OneLayer)],
        );
        let r = run_plan(&plan, &bundles(1, 2.0)).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.delta_rows.len(), 1);
        assert_eq!(r.ablation_rows.len(), 1);
        assert_eq!(r.shap_tables.len(), 1);
        assert_eq!(r.ordering_checks[0].holds, None);
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        r.check_consistency().unwrap();
        assert_eq!(r.pca.as_ref().unwrap().len(), 120);
    }

    #[test]
    fn all_three_modes_and_combined_training() {
        let sel = AssemblyConfig {
            k: 4,
            ..AssemblyConfig::new(Mode::Selected)
        };
        let plan = quick_plan(
            &["task0", "task1", "task2"],
            &["task1-task0", "task2-task0&task1"],
            vec![
                AssemblyConfig::new(Mode::OneLayer),
                sel,
                AssemblyConfig::new(Mode::MultiLayer),
            ],
        );
        let r = run_plan(&plan, &bundles(3, 2.0)).unwrap();
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert_eq!(r.rows.len(), 12);
        assert_eq!(r.delta_rows.len(), 6);
        assert!(r.ordering_checks.iter().all(|c| c.holds.is_some()));
        // Combined training uses 96 + 96 rows; evaluation is on task2's 24 test rows.
        assert_eq!(
            r.row("task2-task0&task1", "one_layer", true)
                .unwrap()
                .result
                .n,
            24
        );
        r.check_consistency().unwrap();
    }

    #[test]
    fn cell_errors_do_not_stop_the_run() {
        let bad = AssemblyConfig {
            layer: 3,
            ..AssemblyConfig::new(Mode::OneLayer)
        };
        let plan = quick_plan(
            &["task0"],
            &["task0"],
            vec![bad, AssemblyConfig::new(Mode::MultiLayer)],
        );
        let r = run_plan(&plan, &bundles(1, 2.0)).unwrap();
        assert_eq!(r.errors.len(), 2);
        assert!(r.errors[0].message.contains("layer 3"));
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn mixed_task_types_rejected() {
        let mut b = bundles(1, 2.0);
        let sf = synth_generate(&SynthSpec {
            n_per_task: 20,
            hidden_dim: 8,
            n_tasks: 2,
            task_type: TaskType::ShortForm,
            ..Default::default()
        })
        .unwrap();
        b.insert("task1".into(), sf[1].clone());
        let plan = quick_plan(
            &["task0", "task1"],
            &["task1-task0"],
            vec![AssemblyConfig::new(Mode::OneLayer)],
        );
        let err = run_plan(&plan, &b).unwrap_err();
        assert!(
            err.to_string().contains("multiple_choice") && err.to_string().contains("short_form")
        );
    }
}
