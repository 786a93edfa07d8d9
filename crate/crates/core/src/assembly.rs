//! Feature matrices for the three hidden-state configurations.
//!
//! Column layout is always `[hidden block][agnostic block]`, the agnostic
//! block present only when `include_agnostic` is set.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agnostic::batch_features;
use crate::dataset::{DatasetBundle, SplitAssignment, TaskType};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::*;

pub const DEFAULT_LAYER: usize = 15;
pub const DEFAULT_K: usize = 300;

pub fn default_layers() -> Vec<usize> {
    (13..=17).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneLayer,
    Selected,
    MultiLayer,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OneLayer => "one_layer",
            Mode::Selected => "selected",
            Mode::MultiLayer => "multi_layer",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_layer" => Ok(Mode::OneLayer),
            "selected" => Ok(Mode::Selected),
            "multi_layer" => Ok(Mode::MultiLayer),
            other => Err(Error::invalid(format!("unknown assembly mode {other:?}"))),
        }
    }
}

fn default_layer() -> usize {
    DEFAULT_LAYER
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    pub mode: Mode,
    /// Source layer for `one_layer` and `selected`.
    #[serde(default = "default_layer")]
    pub layer: usize,
    /// Layers for `multi_layer`.
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    /// Number of selected columns for `selected`.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub include_agnostic: bool,
}

impl AssemblyConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            layer: DEFAULT_LAYER,
            layers: default_layers(),
            k: DEFAULT_K,
            include_agnostic: false,
        }
    }

    pub fn with_agnostic(mut self, on: bool) -> Self {
        self.include_agnostic = on;
        self
    }

    /// Short name used in reports, e.g. `selected_k300`.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::OneLayer if self.layer == DEFAULT_LAYER => "one_layer".into(),
            Mode::OneLayer => format!("one_layer_l{}", self.layer),
            Mode::Selected if self.layer == DEFAULT_LAYER => format!("selected_k{}", self.k),
            Mode::Selected => format!("selected_k{}_l{}", self.k, self.layer),
            Mode::MultiLayer if self.layers == default_layers() => "multi_layer".into(),
            Mode::MultiLayer => format!(
                "multi_layer_l{}",
                self.layers
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("-")
            ),
        }
    }

    /// Hidden layers read by this configuration.
    pub fn source_layers(&self) -> Vec<usize> {
        match self.mode {
            Mode::OneLayer | Mode::Selected => vec![self.layer],
            Mode::MultiLayer => self.layers.clone(),
        }
    }

    /// Width of the hidden block.
    pub fn hidden_width(&self, hidden_dim: usize) -> usize {
        match self.mode {
            Mode::OneLayer => hidden_dim,
            Mode::Selected => self.k,
            Mode::MultiLayer => self.layers.len() * hidden_dim,
        }
    }

    /// Total assembled width.
    pub fn width(&self, hidden_dim: usize, task: TaskType) -> usize {
        self.hidden_width(hidden_dim)
            + if self.include_agnostic {
                task.agnostic_arity()
            } else {
                0
            }
    }

    pub fn validate(&self, hidden_dim: usize) -> Result<()> {
        if self.mode == Mode::Selected && (self.k == 0 || self.k > hidden_dim) {
            return Err(Error::invalid(format!(
                "k = {} must be in 1..={hidden_dim}",
                self.k
            )));
        }
        if self.mode == Mode::MultiLayer && self.layers.is_empty() {
            return Err(Error::invalid("multi_layer needs at least one layer"));
        }
        Ok(())
    }
}

/// An assembled training or evaluation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureView {
    pub x: Matrix,
    /// Raw labels (regression targets) of the included rows.
    pub y: Vec<f64>,
    pub sample_ids: Vec<String>,
    /// Index of the first agnostic column, if any.
    pub agnostic_start: Option<usize>,
}

impl FeatureView {
    pub fn width(&self) -> usize {
        self.x.cols()
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn concat(parts: Vec<FeatureView>) -> Result<FeatureView> {
        let agnostic_start = parts.first().and_then(|v| v.agnostic_start);
        if parts.iter().any(|v| v.agnostic_start != agnostic_start) {
            return Err(Error::Shape("views disagree on agnostic layout".into()));
        }
        let mut ys = Vec::new();
        let mut ids = Vec::new();
        let mut xs = Vec::with_capacity(parts.len());
        for v in parts {
            ys.extend(v.y);
            ids.extend(v.sample_ids);
            xs.push(v.x);
        }
        Ok(FeatureView {
            x: Matrix::vstack(&xs)?,
            y: ys,
            sample_ids: ids,
            agnostic_start,
        })
    }
}

/// Sample Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "pearson on lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least 2 points"));
    }
    let ys = Centered::new(y);
    Ok(ys.correlate(x.iter().copied()))
}

/// A vector centered once, reused against many columns.
struct Centered {
    dev: Vec<f64>,
    norm: f64,
}

impl Centered {
    fn new(v: &[f64]) -> Self {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let dev: Vec<f64> = v.iter().map(|a| a - mean).collect();
        let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
        Self { dev, norm }
    }

    fn correlate(&self, x: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = self.dev.len() as f64;
        let mean = x.clone().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (a, d) in x.zip(&self.dev) {
            let e = a - mean;
            sxy += e * d;
            sxx += e * e;
        }
        let denom = sxx.sqrt() * self.norm;
        if denom == 0.0 || !denom.is_finite() {
            return 0.0;
        }
        (sxy / denom).clamp(-1.0, 1.0)
    }
}

/// Columns chosen by absolute Pearson correlation with the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMap {
    pub source_columns: Vec<usize>,
    pub scores: Vec<f64>,
}

impl SelectionMap {
    pub fn k(&self) -> usize {
        self.source_columns.len()
    }

    /// Plain-text audit form: a header then one `index<TAB>score` line per column.
    pub fn to_text(&self) -> String {
        let mut out = String::from("rank\tcolumn\tabs_pearson\n");
        for (i, (c, s)) in self.source_columns.iter().zip(&self.scores).enumerate() {
            out.push_str(&format!("{i}\t{c}\t{s:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |line: usize, detail: &str| Error::Parse {
            what: format!("selection map line {line}"),
            detail: detail.to_string(),
        };
        let mut cols = Vec::new();
        let mut scores = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(parse_err(i + 1, "expected 3 tab-separated fields"));
            }
            cols.push(
                f[1].parse()
                    .map_err(|_| parse_err(i + 1, "bad column index"))?,
            );
            scores.push(f[2].parse().map_err(|_| parse_err(i + 1, "bad score"))?);
        }
        Ok(Self {
            source_columns: cols,
            scores,
        })
    }
}

/// Top-`k` columns of `hidden` by |r| with `labels`; ties go to the lower index.
pub fn fit_selection(hidden: &Matrix, labels: &[f64], k: usize) -> Result<SelectionMap> {
    if hidden.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            hidden.rows(),
            labels.len()
        )));
    }
    if hidden.rows() < 2 {
        return Err(Error::invalid("selection needs at least 2 rows"));
    }
    if k == 0 || k > hidden.cols() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={}",
            hidden.cols()
        )));
    }
    let y = Centered::new(labels);
    let rows = hidden.rows();
    let scores: Vec<f64> = (0..hidden.cols())
        .into_par_iter()
        .map(|c| y.correlate((0..rows).map(|r| hidden.get(r, c))).abs())
        .collect();

    let rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut order: Vec<usize> = (0..hidden.cols()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable_by(rank);
    Ok(SelectionMap {
        scores: order.iter().map(|&c| scores[c]).collect(),
        source_columns: order,
    })
}

/// A configuration plus whatever it learned from the source training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedAssembly {
    pub config: AssemblyConfig,
    pub task_type: TaskType,
    pub hidden_dim: usize,
    pub selection: Option<SelectionMap>,
}

/// Training rows contributed by one source dataset.
pub struct SourcePart<'a> {
    pub bundle: &'a DatasetBundle,
    pub labels: &'a [f64],
    pub rows: &'a [usize],
}

impl FittedAssembly {
    /// Fits on the concatenated training rows of every part.
    pub fn fit(config: &AssemblyConfig, parts: &[SourcePart<'_>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("no source datasets"))?;
        let task_type = first.bundle.task_type();
        let hidden_dim = first.bundle.manifest.hidden_dim;
        for p in parts {
            if p.bundle.task_type() != task_type {
                return Err(Error::TaskMismatch {
                    left: task_type.to_string(),
                    right: p.bundle.task_type().to_string(),
                });
            }
            if p.bundle.manifest.hidden_dim != hidden_dim {
                return Err(Error::Shape(format!(
                    "hidden_dim {} vs {}",
                    hidden_dim, p.bundle.manifest.hidden_dim
                )));
            }
            for l in config.source_layers() {
                p.bundle.manifest.layer_position(l)?;
            }
        }
        config.validate(hidden_dim)?;

        let selection = if config.mode == Mode::Selected {
            let blocks = parts
                .iter()
                .map(|p| p.bundle.slice_layers_rows(&[config.layer], p.rows))
                .collect::<Result<Vec<_>>>()?;
            let hidden = Matrix::vstack(&blocks)?;
            let labels: Vec<f64> = parts
                .iter()
                .flat_map(|p| p.rows.iter().map(|&r| p.labels[r]))
                .collect();
            Some(fit_selection(&hidden, &labels, config.k)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            task_type,
            hidden_dim,
            selection,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width(self.hidden_dim, self.task_type)
    }

    /// Single-line key/value pairs for a saved model's metadata.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::from([
            (
                "assembly".to_string(),
                serde_json::to_string(&self.config).expect("config serializes"),
            ),
            ("task_type".to_string(), self.task_type.to_string()),
            ("hidden_dim".to_string(), self.hidden_dim.to_string()),
        ]);
        if let Some(sel) = &self.selection {
            meta.insert(
                "selection".into(),
                serde_json::to_string(sel).expect("selection serializes"),
            );
        }
        meta
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            meta.get(k).ok_or_else(|| Error::Parse {
                what: "model metadata".into(),
                detail: format!("missing `{k}`; was this model trained by the assembly pipeline?"),
            })
        };
        let bad = |k: &str, e: &dyn fmt::Display| Error::Parse {
            what: "model metadata".into(),
            detail: format!("bad `{k}`: {e}"),
        };
        let config: AssemblyConfig =
            serde_json::from_str(get("assembly")?).map_err(|e| bad("assembly", &e))?;
        let task_type: TaskType = get("task_type")?
            .parse()
            .map_err(|e: Error| bad("task_type", &e))?;
        let hidden_dim: usize = get("hidden_dim")?
            .parse()
            .map_err(|e| bad("hidden_dim", &e))?;
        let selection: Option<SelectionMap> = match meta.get("selection") {
            Some(v) => Some(serde_json::from_str(v).map_err(|e| bad("selection", &e))?),
            None => None,
        };
        if (config.mode == Mode::Selected) != selection.is_some() {
            return Err(bad("selection", &"present only for the selected mode"));
        }
        config.validate(hidden_dim)?;
        Ok(Self {
            config,
            task_type,
            hidden_dim,
            selection,
        })
    }

    /// Builds the view for `rows` of any compatible bundle.
    pub fn apply(
        &self,
        bundle: &DatasetBundle,
        labels: &[f64],
        rows: &[usize],
    ) -> Result<FeatureView> {
        if bundle.task_type() != self.task_type {
            return Err(Error::TaskMismatch {
                left: self.task_type.to_string(),
                right: bundle.task_type().to_string(),
            });
        }
        if bundle.manifest.hidden_dim != self.hidden_dim {
            return Err(Error::Shape(format!(
                "hidden_dim {} vs {}",
                self.hidden_dim, bundle.manifest.hidden_dim
            )));
        }
        if labels.len() != bundle.n_samples() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                bundle.n_samples()
            )));
        }
        let layers = self.config.source_layers();
        let mut x = bundle.slice_layers_rows(&layers, rows)?;
        if let Some(sel) = &self.selection {
            x = x.select_columns(&sel.source_columns);
        }
        let agnostic_start = if self.config.include_agnostic {
            let start = x.cols();
            let feats = batch_features(bundle)?.select_rows(rows);
            x = x.hstack(&feats)?;
            Some(start)
        } else {
            None
        };
        debug_assert_eq!(x.cols(), self.width());
        Ok(FeatureView {
            x,
            y: rows.iter().map(|&r| labels[r]).collect(),
            sample_ids: rows.iter().map(|&r| bundle.signals[r].id.clone()).collect(),
            agnostic_start,
        })
    }
}

/// Train and test views for one dataset; selection is fit on train rows only.
pub fn assemble(
    bundle: &DatasetBundle,
    labels: &[f64],
    split: &SplitAssignment,
    config: &AssemblyConfig,
) -> Result<(FeatureView, FeatureView, FittedAssembly)> {
    let fitted = FittedAssembly::fit(
        config,
        &[SourcePart {
            bundle,
            labels,
            rows: &split.train_ids,
        }],
    )?;
    let train = fitted.apply(bundle, labels, &split.train_ids)?;
    let test = fitted.apply(bundle, labels, &split.test_ids)?;
    Ok((train, test, fitted))
}

/// Applies a source-fitted assembly to the test rows of another dataset.
pub fn project(
    fitted: &FittedAssembly,
    bundle: &DatasetBundle,
    labels: &[f64],
    split: &SplitAssignment,
) -> Result<FeatureView> {
    fitted.apply(bundle, labels, &split.test_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_split;
    use crate::dataset::tests::{manifest, mc_signal, sf_signal};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..x.len() {
            num += (x[i] - mx) * (y[i] - my);
            vx += (x[i] - mx).powi(2);
            vy += (y[i] - my).powi(2);
        }
        num / (vx * vy).sqrt()
    }

    proptest! {
        #[test]
        fn pearson_matches_two_pass(data in prop::collection::vec((-100.0f64..100.0, -1.0f64..1.0), 3..200)) {
            let (x, y): (Vec<f64>, Vec<f64>) = data.into_iter().unzip();
            let r = pearson(&x, &y).unwrap();
            prop_assert!((r - two_pass(&x, &y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn selection_finds_copy_of_labels() {
        let labels = [0.0, 1.0, 0.0, 1.0, 1.0];
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![(i * 7 % 3) as f64, 0.5, l])
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let sel = fit_selection(&m, &labels, 2).unwrap();
        assert_eq!(sel.source_columns[0], 2);
        assert!((sel.scores[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_columns_tie_by_index() {
        let m = Matrix::from_vec(4, 5, vec![1.0; 20]).unwrap();
        let sel = fit_selection(&m, &[0.0, 1.0, 0.0, 1.0], 3).unwrap();
        assert_eq!(sel.source_columns, vec![0, 1, 2]);
        assert_eq!(sel.scores, vec![0.0; 3]);
        assert!(fit_selection(&m, &[0.0, 1.0, 0.0, 1.0], 6).is_err());
    }

    #[test]
    fn selection_text_round_trip() {
        let sel = SelectionMap {
            source_columns: vec![4, 0, 9],
            scores: vec![0.9, 0.123_456_789_012_345_67, 0.0],
        };
        assert_eq!(SelectionMap::from_text(&sel.to_text()).unwrap(), sel);
    }

    #[test]
    fn selection_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, p) = (40, 12);
        let m = Matrix::from_vec(n, p, (0..n * p).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let perm: Vec<usize> = (0..p).rev().collect();
        let a = fit_selection(&m, &y, 5).unwrap();
        let b = fit_selection(&m.select_columns(&perm), &y, 5).unwrap();
        let mapped: Vec<usize> = b.source_columns.iter().map(|&c| perm[c]).collect();
        assert_eq!(a.source_columns, mapped);
    }

    fn random_bundle(
        task: TaskType,
        n: usize,
        dim: usize,
        layers: Vec<usize>,
        seed: u64,
    ) -> DatasetBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = dim * layers.len();
        let hidden = (0..n * w).map(|_| rng.random::<f32>()).collect();
        let signals = (0..n)
            .map(|i| match task {
                TaskType::MultipleChoice => mc_signal(
                    &i.to_string(),
                    [rng.random(), 0.0, 1.0, 0.5],
                    "A",
                    if i % 2 == 0 { "A" } else { "B" },
                ),
                TaskType::ShortForm => sf_signal(
                    &i.to_string(),
                    vec![-rng.random::<f64>()],
                    vec![rng.random()],
                    "x y",
                    &["x z"],
                ),
            })
            .collect();
        DatasetBundle::new(manifest(task, n, dim, layers), hidden, signals, None).unwrap()
    }

    #[test]
    fn selection_ignores_test_rows() {
        let b = random_bundle(TaskType::MultipleChoice, 30, 8, vec![15], 1);
        let labels: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        let split = make_split(30, 2, 0.8).unwrap();
        let cfg = AssemblyConfig {
            k: 3,
            ..AssemblyConfig::new(Mode::Selected)
        };
        let (_, _, fitted) = assemble(&b, &labels, &split, &cfg).unwrap();

        let mut hidden = b.hidden().to_vec();
        for &t in &split.test_ids {
            for v in &mut hidden[t * 8..(t + 1) * 8] {
                *v = 1e3 * *v + 7.0;
            }
        }
        let mut labels2 = labels.clone();
        for &t in &split.test_ids {
            labels2[t] = 1.0 - labels2[t];
        }
        let b2 = DatasetBundle::new(b.manifest.clone(), hidden, b.signals.clone(), None).unwrap();
        let (_, _, fitted2) = assemble(&b2, &labels2, &split, &cfg).unwrap();
        assert_eq!(fitted.selection, fitted2.selection);
    }

    #[test]
    fn widths_follow_config() {
        let b = random_bundle(TaskType::ShortForm, 10, 6, vec![13, 14, 15, 16, 17], 3);
        let labels = vec![0.5; 10];
        let split = make_split(10, 0, 0.8).unwrap();
        for (mode, agn, want) in [
            (Mode::OneLayer, false, 6),
            (Mode::OneLayer, true, 10),
            (Mode::Selected, true, 7),
            (Mode::MultiLayer, false, 30),
            (Mode::MultiLayer, true, 34),
        ] {
            let cfg = AssemblyConfig {
                k: 3,
                ..AssemblyConfig::new(mode)
            }
            .with_agnostic(agn);
            let (tr, te, _) = assemble(&b, &labels, &split, &cfg).unwrap();
            assert_eq!((tr.width(), te.width()), (want, want), "{mode:?} {agn}");
            assert_eq!(tr.agnostic_start, agn.then_some(want - 4));
            assert_eq!((tr.len(), te.len()), (8, 2));
        }
    }

    #[test]
    fn missing_layer_and_task_mismatch() {
        let b = random_bundle(TaskType::MultipleChoice, 10, 4, vec![15], 3);
        let labels = vec![0.0; 10];
        let split = make_split(10, 0, 0.8).unwrap();
        let cfg = AssemblyConfig::new(Mode::MultiLayer);
        assert!(matches!(
            assemble(&b, &labels, &split, &cfg),
            Err(Error::LayerNotStored { .. })
        ));

        let (_, _, fitted) =
            assemble(&b, &labels, &split, &AssemblyConfig::new(Mode::OneLayer)).unwrap();
        let other = random_bundle(TaskType::ShortForm, 10, 4, vec![15], 4);
        assert!(matches!(
            project(&fitted, &other, &labels, &split),
            Err(Error::TaskMismatch { .. })
        ));
    }

    #[test]
    fn view_columns_are_hidden_then_agnostic() {
        let b = random_bundle(TaskType::MultipleChoice, 6, 3, vec![15], 8);
        let labels = vec![1.0; 6];
        let split = make_split(6, 1, 0.5).unwrap();
        let cfg = AssemblyConfig::new(Mode::OneLayer).with_agnostic(true);
        let (tr, _, _) = assemble(&b, &labels, &split, &cfg).unwrap();
        let feats = batch_features(&b).unwrap();
        for (i, &r) in split.train_ids.iter().enumerate() {
            let row = tr.x.row(i);
            let hidden: Vec<f64> = b.hidden_row(r).iter().map(|&v| v as f64).collect();
            assert_eq!(&row[..3], &hidden[..]);
            assert_eq!(&row[3..], feats.row(r));
        }
    }

    #[test]
    fn meta_round_trip() {
        let bundle = DatasetBundle::new(
            manifest(TaskType::MultipleChoice, 6, 4, vec![15]),
            (0..24).map(|v| v as f32 * 0.37 % 1.0).collect(),
            (0..6)
                .map(|i| mc_signal(&format!("s{i}"), [1.0, 0.0, 0.0, 0.0], "A", "A"))
                .collect(),
            None,
        )
        .unwrap();
        let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let rows: Vec<usize> = (0..6).collect();
        for mode in [Mode::OneLayer, Mode::Selected] {
            let config = AssemblyConfig {
                k: 2,
                ..AssemblyConfig::new(mode)
            };
            let fitted = FittedAssembly::fit(
                &config,
                &[SourcePart {
                    bundle: &bundle,
                    labels: &labels,
                    rows: &rows,
                }],
            )
            .unwrap();
            assert_eq!(
                FittedAssembly::from_meta(&fitted.to_meta()).unwrap(),
                fitted
            );
        }
        assert!(FittedAssembly::from_meta(&BTreeMap::new()).is_err());
    }
}
