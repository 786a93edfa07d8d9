//! `probeforge` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal or I/O error. Diagnostics go to stderr; data goes to the
//! `--out` file when given, otherwise stdout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use probeforge::agnostic::{batch_features, feature_names};
use probeforge::assembly::{
    fit_selection, AssemblyConfig, FeatureView, FittedAssembly, Mode, SourcePart, DEFAULT_K,
    DEFAULT_LAYER,
};
use probeforge::dataset::{load_bundle, make_split, write_bundle, DatasetBundle, TaskType};
use probeforge::fmt::{csv_field, sig6};
use probeforge::forest::{self, ForestModel, ForestParams, MaxFeatures};
use probeforge::harness::{
    emit_report, run_plan_from_disk, synth_generate, AblationRow, CellError, DeltaRow, EvalReport,
    ExperimentPlan, OrderingCheck, ResultRow, SynthSpec,
};
use probeforge::labeling::{binarize, label_bundle, labels_for};
use probeforge::metrics::{evaluate, DEFAULT_BINS, DEFAULT_THRESHOLD};
use probeforge::par::with_threads;
use probeforge::pca::{project_datasets, write_pca_csv};
use probeforge::shap::{mean_abs_table, shap_forest};
use probeforge::Error;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Parser)]
#[command(
    name = "probeforge",
    version,
    about = "Hidden-state correctness probes with data-agnostic features"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Knobs shared by every subcommand. Unset values fall back to the plan or
/// model being used, then to the built-in defaults.
#[derive(Args)]
struct Global {
    /// Seed for splits and forests [default: 42]
    #[arg(long, global = true, env = "PROBEFORGE_SEED")]
    seed: Option<u64>,
    /// Decision threshold for accuracy and label binarisation [default: 0.5]
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Number of equal-width calibration bins [default: 10]
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// Trees per forest [default: 200]
    #[arg(long, global = true)]
    trees: Option<usize>,
    /// Hidden units kept by the selected configuration [default: 300]
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Fraction of each dataset used for training [default: 0.8]
    #[arg(long, global = true)]
    train_fraction: Option<f64>,
    /// Worker threads (0 = all cores); results do not depend on it
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset bundle and print a one-line summary
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Compute correctness labels (one value per line)
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute data-agnostic features as CSV
    Features {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank hidden units by |Pearson| with the labels on the training split
    Select {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAYER)]
        layer: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a probe on the training split of one or more datasets
    Train {
        /// Repeat to train on several datasets combined
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        /// Where to write the model file
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        assembly: AssemblyArgs,
        #[arg(long, default_value_t = 5)]
        min_samples_leaf: usize,
        /// `sqrt`, `all` or a count
        #[arg(long, default_value = "sqrt")]
        max_features: MaxFeatures,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Evaluate a probe on a dataset's test split
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Score every sample instead of the test split
        #[arg(long)]
        all_rows: bool,
    },
    /// Run an experiment plan and write the report files
    Transfer {
        #[arg(long)]
        plan: PathBuf,
        /// Output directory [default: the plan's output_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean |SHAP| per feature of a probe on a dataset's test split
    Shap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        all_rows: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-component PCA of one layer pooled across datasets
    Pca {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LAYER)]
        layer: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic task bundles with a known transfer structure
    Synth {
        /// Directory receiving one sub-directory per task
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_tasks: usize,
        #[arg(long, default_value_t = 2000)]
        n_per_task: usize,
        #[arg(long, default_value_t = 64)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 3.0)]
        beta: f64,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, default_value = "multiple_choice")]
        task_type: TaskType,
        /// Comma-separated layer indices
        #[arg(long, value_delimiter = ',', default_value = "15")]
        layers: Vec<usize>,
    },
    /// Check a written report for internal consistency and summarise it
    Report {
        /// Directory holding report.json
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct AssemblyArgs {
    /// one_layer, selected or multi_layer
    #[arg(long, default_value = "one_layer")]
    mode: Mode,
    /// Layer for one_layer and selected
    #[arg(long, default_value_t = DEFAULT_LAYER)]
    layer: usize,
    /// Comma-separated layers for multi_layer [default: 13,14,15,16,17]
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Leave out the data-agnostic features
    #[arg(long)]
    no_agnostic: bool,
}

enum Failure {
    Data(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e)
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let jobs = cli.global.jobs;
    match with_threads(jobs, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Validate { dataset } => {
            let b = load_bundle(dataset)?;
            let m = &b.manifest;
            let layers: Vec<String> = m.layers.iter().map(usize::to_string).collect();
            println!(
                "ok {} task={} n={} hidden_dim={} layers={} labels={}",
                m.dataset_name,
                m.task_type,
                m.n_samples,
                m.hidden_dim,
                layers.join(","),
                if b.labels.is_some() {
                    "stored"
                } else {
                    "absent"
                }
            );
        }
        Command::Label { dataset, out } => {
            let b = load_bundle(dataset)?;
            let labels = label_bundle(&b)?;
            let mut text = String::new();
            for (s, v) in b.signals.iter().zip(&labels.values) {
                text.push_str(&format!("{}\t{v}\n", s.id));
            }
            emit(out.as_deref(), text.as_bytes())?;
        }
        Command::Features { dataset, out } => {
            let b = load_bundle(dataset)?;
            let x = batch_features(&b)?;
            let mut text = format!("sample_id,{}\n", feature_names(b.task_type()).join(","));
            for (s, row) in b.signals.iter().zip(x.iter_rows()) {
                let cells: Vec<String> = row.iter().map(|&v| sig6(v)).collect();
                text.push_str(&format!("{},{}\n", csv_field(&s.id), cells.join(",")));
            }
            emit(out.as_deref(), text.as_bytes())?;
        }
        Command::Select {
            dataset,
            layer,
            out,
        } => {
            let b = load_bundle(dataset)?;
            let labels = labels_for(&b)?;
            let split = make_split(b.n_samples(), seed(g), train_fraction(g))?;
            let hidden = b.slice_layers_rows(&[*layer], &split.train_ids)?;
            let y: Vec<f64> = split.train_ids.iter().map(|&r| labels[r]).collect();
            let sel = fit_selection(&hidden, &y, g.k.unwrap_or(DEFAULT_K))?;
            emit(out.as_deref(), sel.to_text().as_bytes())?;
        }
        Command::Train {
            dataset,
            model,
            assembly,
            min_samples_leaf,
            max_features,
            max_depth,
        } => {
            let config = assembly_config(assembly, g);
            let bundles = dataset
                .iter()
                .map(load_bundle)
                .collect::<Result<Vec<_>, _>>()?;
            let params = ForestParams {
                n_trees: g.trees.unwrap_or(ForestParams::default().n_trees),
                min_samples_leaf: *min_samples_leaf,
                max_features: *max_features,
                max_depth: *max_depth,
                bootstrap: true,
                seed: seed(g),
            };
            let (fitted, view) = fit_training_view(&bundles, &config, g)?;
            let mut m = forest::train(&view.x, &view.y, &params)?;
            m.meta = fitted.to_meta();
            let names: Vec<&str> = bundles.iter().map(|b| b.name()).collect();
            m.meta.insert("trained_on".into(), names.join("&"));
            m.meta.insert("split_seed".into(), seed(g).to_string());
            m.meta
                .insert("train_fraction".into(), train_fraction(g).to_string());
            forest::save(&m, model)?;
            eprintln!(
                "trained {} trees on {} rows x {} features ({})",
                m.trees.len(),
                view.x.rows(),
                view.x.cols(),
                config.label()
            );
        }
        Command::Eval {
            model,
            dataset,
            all_rows,
        } => {
            let (m, fitted) = load_model(model)?;
            let b = load_bundle(dataset)?;
            let view = target_view(&m, &fitted, &b, *all_rows, g)?;
            let threshold = g.threshold.unwrap_or(DEFAULT_THRESHOLD);
            let scores = m.predict(&view.x)?;
            let truth = binarize(&view.y, threshold);
            let r = evaluate(&scores, &truth, threshold, g.bins.unwrap_or(DEFAULT_BINS))?;
            let doc = json!({
                "dataset": b.name(),
                "config": fitted.config.label(),
                "n": r.n,
                "acc": r.acc,
                "auroc": r.auroc,
                "ece": r.ece,
                "threshold": r.threshold,
            });
            println!("{doc}");
        }
        Command::Transfer { plan, out } => {
            let mut p = ExperimentPlan::load(plan)?;
            if let Some(s) = g.seed {
                p.seed = s;
                p.forest.seed = s;
            }
            if let Some(t) = g.threshold {
                p.threshold = t;
            }
            if let Some(b) = g.bins {
                p.bins = b;
            }
            if let Some(t) = g.trees {
                p.forest.n_trees = t;
            }
            if let Some(f) = g.train_fraction {
                p.train_fraction = f;
            }
            if let Some(k) = g.k {
                for c in &mut p.configs {
                    c.k = k;
                }
            }
            let dir = out.clone().unwrap_or_else(|| p.output_dir.clone());
            let report = run_plan_from_disk(&p)?;
            let files = emit_report(&report, &dir)?;
            for e in &report.errors {
                eprintln!("cell {} / {} failed: {}", e.transfer, e.config, e.message);
            }
            eprintln!("wrote {} files to {}", files.written.len(), dir.display());
        }
        Command::Shap {
            model,
            dataset,
            all_rows,
            out,
        } => {
            let (m, fitted) = load_model(model)?;
            let b = load_bundle(dataset)?;
            let view = target_view(&m, &fitted, &b, *all_rows, g)?;
            let attribs = shap_forest(&m, &view.x)?;
            let table = mean_abs_table(&attribs, view.agnostic_start)?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            emit(out.as_deref(), &buf)?;
        }
        Command::Pca {
            dataset,
            layer,
            out,
        } => {
            let bundles = dataset
                .iter()
                .map(load_bundle)
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&DatasetBundle> = bundles.iter().collect();
            let points = project_datasets(&refs, *layer)?;
            let mut buf = Vec::new();
            write_pca_csv(&points, &mut buf)?;
            emit(out.as_deref(), &buf)?;
        }
        Command::Synth {
            out,
            n_tasks,
            n_per_task,
            hidden_dim,
            beta,
            gamma,
            task_type,
            layers,
        } => {
            let spec = SynthSpec {
                n_per_task: *n_per_task,
                hidden_dim: *hidden_dim,
                n_tasks: *n_tasks,
                beta: *beta,
                gamma: *gamma,
                seed: g.seed.unwrap_or(0),
                task_type: *task_type,
                layers: layers.clone(),
                ..Default::default()
            };
            for b in synth_generate(&spec)? {
                let dir = out.join(b.name());
                write_bundle(&b, &dir)?;
                println!("{}", dir.display());
            }
        }
        Command::Report { dir } => {
            let report = read_report(dir)?;
            report.check_consistency()?;
            print!("{}", summarize(&report));
        }
    }
    Ok(())
}

fn seed(g: &Global) -> u64 {
    g.seed.unwrap_or(DEFAULT_SEED)
}

fn train_fraction(g: &Global) -> f64 {
    g.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Error::io(path, e).into()),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn assembly_config(a: &AssemblyArgs, g: &Global) -> AssemblyConfig {
    let mut c = AssemblyConfig::new(a.mode).with_agnostic(!a.no_agnostic);
    c.layer = a.layer;
    if let Some(layers) = &a.layers {
        c.layers = layers.clone();
    }
    if let Some(k) = g.k {
        c.k = k;
    }
    c
}

fn fit_training_view(
    bundles: &[DatasetBundle],
    config: &AssemblyConfig,
    g: &Global,
) -> CliResult<(FittedAssembly, FeatureView)> {
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for b in bundles {
        labels.push(labels_for(b)?);
        splits.push(make_split(b.n_samples(), seed(g), train_fraction(g))?);
    }
    let parts: Vec<SourcePart<'_>> = bundles
        .iter()
        .zip(&labels)
        .zip(&splits)
        .map(|((bundle, labels), split)| SourcePart {
            bundle,
            labels,
            rows: &split.train_ids,
        })
        .collect();
    let fitted = FittedAssembly::fit(config, &parts)?;
    let views = parts
        .iter()
        .map(|p| fitted.apply(p.bundle, p.labels, p.rows))
        .collect::<Result<Vec<_>, _>>()?;
    let view = FeatureView::concat(views)?;
    Ok((fitted, view))
}

fn load_model(path: &Path) -> CliResult<(ForestModel, FittedAssembly)> {
    let m = forest::load(path)?;
    let fitted = FittedAssembly::from_meta(&m.meta)?;
    if fitted.width() != m.n_features {
        return Err(Error::Validation(format!(
            "model expects {} features but its assembly produces {}",
            m.n_features,
            fitted.width()
        ))
        .into());
    }
    Ok((m, fitted))
}

/// Test rows of `b` (split with the model's own seed unless `--seed` is
/// given), or every row.
fn target_view(
    m: &ForestModel,
    fitted: &FittedAssembly,
    b: &DatasetBundle,
    all_rows: bool,
    g: &Global,
) -> CliResult<FeatureView> {
    if b.task_type() != fitted.task_type {
        return Err(Error::TaskMismatch {
            left: format!("model trained on {}", fitted.task_type),
            right: format!("dataset {} is {}", b.name(), b.task_type()),
        }
        .into());
    }
    let labels = labels_for(b)?;
    let rows: Vec<usize> = if all_rows {
        (0..b.n_samples()).collect()
    } else {
        let meta_num = |k: &str| m.meta.get(k).and_then(|v| v.parse::<f64>().ok());
        let split_seed = g
            .seed
            .or_else(|| m.meta.get("split_seed").and_then(|v| v.parse().ok()))
            .unwrap_or(DEFAULT_SEED);
        let frac = g
            .train_fraction
            .or_else(|| meta_num("train_fraction"))
            .unwrap_or(DEFAULT_TRAIN_FRACTION);
        make_split(b.n_samples(), split_seed, frac)?.test_ids
    };
    Ok(fitted.apply(b, &labels, &rows)?)
}

fn read_report(dir: &Path) -> CliResult<EvalReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let parse_err = |detail: String| Error::Parse {
        what: path.display().to_string(),
        detail,
    };
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let mut take = |key: &str| {
        doc.get_mut(key)
            .map(serde_json::Value::take)
            .ok_or_else(|| parse_err(format!("missing `{key}`")))
    };
    let plan = take("plan")?;
    let inputs = take("inputs")?;
    let rows = take("results")?;
    let deltas = take("delta_perf")?;
    let ablation = take("ablation")?;
    let ordering = take("ordering_checks")?;
    let errors = take("errors")?;
    let de = |e: serde_json::Error| parse_err(e.to_string());
    Ok(EvalReport {
        plan: serde_json::from_value::<ExperimentPlan>(plan).map_err(de)?,
        inputs: serde_json::from_value::<BTreeMap<String, String>>(inputs).map_err(de)?,
        rows: serde_json::from_value::<Vec<ResultRow>>(rows).map_err(de)?,
        delta_rows: serde_json::from_value::<Vec<DeltaRow>>(deltas).map_err(de)?,
        ablation_rows: serde_json::from_value::<Vec<AblationRow>>(ablation).map_err(de)?,
        ordering_checks: serde_json::from_value::<Vec<OrderingCheck>>(ordering).map_err(de)?,
        shap_tables: Vec::new(),
        pca: None,
        errors: serde_json::from_value::<Vec<CellError>>(errors).map_err(de)?,
    })
}

fn summarize(r: &EvalReport) -> String {
    let mut s = format!(
        "{} result rows, {} delta rows, {} ablation rows, {} cell errors\n",
        r.rows.len(),
        r.delta_rows.len(),
        r.ablation_rows.len(),
        r.errors.len()
    );
    s.push_str("transfer\tconfig\tdelta_acc\tdelta_auroc\tdelta_ece\n");
    for d in &r.delta_rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            d.transfer,
            d.config,
            sig6(d.delta.acc),
            sig6(d.delta.auroc),
            sig6(d.delta.ece)
        ));
    }
    for o in &r.ordering_checks {
        if let Some(h) = o.holds {
            s.push_str(&format!(
                "ordering selected >= one_layer >= multi_layer on {}: {h}\n",
                o.transfer
            ));
        }
    }
    s
}
