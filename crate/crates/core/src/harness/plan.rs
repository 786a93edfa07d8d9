use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::AssemblyConfig;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::metrics::{DEFAULT_BINS, DEFAULT_THRESHOLD};

/// Train on `train` (one or more datasets), evaluate on `test`.
///
/// Labels read `A` (in-domain), `B-A` (train A, test B)
/// and `C-A&B` (train on A and B combined, test C).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TransferPair {
    pub train: Vec<String>,
    pub test: String,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['-', '&']) || name.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "dataset name {name:?} must be non-empty without '-', '&' or whitespace"
        )));
    }
    Ok(())
}

impl TransferPair {
    pub fn new(train: Vec<String>, test: impl Into<String>) -> Result<Self> {
        let pair = Self {
            train,
            test: test.into(),
        };
        check_name(&pair.test)?;
        if pair.train.is_empty() {
            return Err(Error::invalid("transfer needs at least one training set"));
        }
        for t in &pair.train {
            check_name(t)?;
        }
        if pair.train.len() > 1 && pair.train.contains(&pair.test) {
            return Err(Error::invalid(format!(
                "combined transfer {pair} tests on one of its training sets"
            )));
        }
        Ok(pair)
    }

    pub fn in_domain(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        Self::new(vec![name.clone()], name)
    }

    pub fn is_in_domain(&self) -> bool {
        self.train.len() == 1 && self.train[0] == self.test
    }

    pub fn label(&self) -> String {
        if self.is_in_domain() {
            self.test.clone()
        } else {
            format!("{}-{}", self.test, self.train.join("&"))
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        match label.split_once('-') {
            None => Self::in_domain(label),
            Some((test, train)) => Self::new(train.split('&').map(str::to_owned).collect(), test),
        }
    }
}

impl fmt::Display for TransferPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl TryFrom<String> for TransferPair {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<TransferPair> for String {
    fn from(p: TransferPair) -> String {
        p.label()
    }
}

fn default_seed() -> u64 {
    42
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_true() -> bool {
    true
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_pca_layer() -> usize {
    crate::assembly::DEFAULT_LAYER
}

/// Declarative experiment description, read from JSON.
///
/// `configs` lists hidden-state configurations; every one is run both with
/// and without the agnostic block, so its `include_agnostic` field is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub datasets: Vec<String>,
    /// Directory holding one bundle directory per dataset name.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub transfers: Vec<TransferPair>,
    pub configs: Vec<AssemblyConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Forest settings; the forest seed is always taken from `seed`.
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub shap: bool,
    #[serde(default = "default_true")]
    pub pca: bool,
    #[serde(default = "default_pca_layer")]
    pub pca_layer: usize,
}

impl ExperimentPlan {
    pub fn new(
        datasets: Vec<String>,
        transfers: Vec<TransferPair>,
        configs: Vec<AssemblyConfig>,
    ) -> Self {
        Self {
            datasets,
            data_dir: None,
            transfers,
            configs,
            seed: default_seed(),
            threshold: default_threshold(),
            bins: default_bins(),
            train_fraction: default_train_fraction(),
            forest: ForestParams::default(),
            output_dir: default_output_dir(),
            shap: true,
            pca: true,
            pca_layer: default_pca_layer(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "plan".into(),
            detail: e.to_string(),
        })
    }

    /// Reads a plan file; a relative `data_dir` is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        plan.data_dir = Some(match plan.data_dir.take() {
            Some(d) if d.is_relative() => base.join(d),
            Some(d) => d,
            None => base.to_path_buf(),
        });
        Ok(plan)
    }

    pub fn dataset_dir(&self, name: &str) -> PathBuf {
        self.data_dir
            .as_deref()
            .unwrap_or(Path::new("."))
            .join(name)
    }

    /// Every transfer "B-A" over ordered pairs of distinct datasets.
    pub fn all_cross_pairs(datasets: &[String]) -> Vec<TransferPair> {
        let mut out = Vec::new();
        for test in datasets {
            for train in datasets {
                if train != test {
                    out.push(TransferPair {
                        train: vec![train.clone()],
                        test: test.clone(),
                    });
                }
            }
        }
        out
    }

    /// Every "C-A&B" leave-one-out combination.
    pub fn leave_one_out(datasets: &[String]) -> Vec<TransferPair> {
        datasets
            .iter()
            .map(|test| TransferPair {
                train: datasets.iter().filter(|d| *d != test).cloned().collect(),
                test: test.clone(),
            })
            .collect()
    }

    /// Structural checks that need no data.
    pub fn validate(&self) -> Result<()> {
        for d in &self.datasets {
            check_name(d)?;
        }
        for t in &self.transfers {
            for name in t.train.iter().chain([&t.test]) {
                if !self.datasets.contains(name) {
                    return Err(Error::invalid(format!(
                        "transfer {t} references unknown dataset {name:?}"
                    )));
                }
            }
        }
        let mut labels: Vec<String> = self.configs.iter().map(AssemblyConfig::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("plan lists the same configuration twice"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.bins == 0 {
            return Err(Error::invalid("bins must be > 0"));
        }
        Ok(())
    }
}
