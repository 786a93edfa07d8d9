//! Random-forest regressor used as the correctness probe.
//!
//! Each tree is grown on a bootstrap resample with its own RNG stream derived
//! from `(seed, tree_index)`, so the trained model does not depend on how many
//! workers build it.

mod io;
mod tree;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load, save, FORMAT_MAGIC, FORMAT_VERSION};
pub use tree::{Node, Tree};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::*;
use tree::{GrowParams, Grower};

/// How many candidate features each split examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(p))`
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (p as f64).sqrt().ceil() as usize,
            MaxFeatures::All => p,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, p.max(1))
    }
}

impl fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxFeatures::Sqrt => f.write_str("sqrt"),
            MaxFeatures::All => f.write_str("all"),
            MaxFeatures::Count(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for MaxFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "all" => Ok(MaxFeatures::All),
            n => n
                .parse()
                .map(MaxFeatures::Count)
                .map_err(|_| Error::invalid(format!("bad max_features {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            min_samples_leaf: 5,
            max_features: MaxFeatures::Sqrt,
            max_depth: None,
            bootstrap: true,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub params: ForestParams,
    /// Mean training target.
    pub base_value: f64,
    /// Free-form annotations carried through save/load.
    pub meta: BTreeMap<String, String>,
}

/// SplitMix64 finaliser; decorrelates per-tree seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn tree_seed(seed: u64, tree_index: usize) -> u64 {
    mix64(seed ^ mix64(tree_index as u64))
}

pub fn train(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<ForestModel> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::invalid("cannot train on an empty matrix"));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite target at row {i}")));
    }
    if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite feature at row {}, column {}",
            i / x.cols(),
            i % x.cols()
        )));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be > 0"));
    }

    let n = x.rows();
    let n_candidates = params.max_features.resolve(x.cols());
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, t));
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let grow = GrowParams {
                min_samples_leaf: params.min_samples_leaf.max(1),
                max_depth: params.max_depth,
                n_candidates,
            };
            Grower::new(x, y, grow, rng).grow(&mut rows)
        })
        .collect();

    Ok(ForestModel {
        trees,
        n_features: x.cols(),
        params: params.clone(),
        base_value: y.iter().sum::<f64>() / n as f64,
        meta: BTreeMap::new(),
    })
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for t in &self.trees {
            let v = t.predict_row(x);
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        // Keeps the mean inside the tree range when rounding would push it out.
        (sum / self.trees.len() as f64).clamp(lo, hi)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_width(x.cols())?;
        Ok((0..x.rows())
            .into_par_iter()
            .map(|r| self.predict_row(x.row(r)))
            .collect())
    }

    pub(crate) fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, got {cols}",
                self.n_features
            )));
        }
        Ok(())
    }

    /// Structural checks applied after loading.
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Validation("forest has no trees".into()));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.check_covers()
                .map_err(|e| Error::Validation(format!("tree {i}: {e}")))?;
            if t.max_feature().is_some_and(|f| f >= self.n_features) {
                return Err(Error::Validation(format!(
                    "tree {i} references a feature >= {}",
                    self.n_features
                )));
            }
        }
        Ok(())
    }
}
