//! Exact path-dependent TreeSHAP and mean-|SHAP| rankings.
//!
//! Conditional expectations are taken under the training cover distribution
//! stored in each node, so no background dataset is needed. The recursion is
//! the polynomial-time path-extension algorithm: each root-to-leaf walk keeps
//! the permutation weights of the unique features seen so far and credits the
//! leaf value to them when the leaf is reached.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forest::{ForestModel, Node, Tree};
use crate::matrix::Matrix;
use crate::par::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapAttribution {
    pub phi: Vec<f64>,
    /// Expected output under the cover distribution.
    pub phi0: f64,
}

impl ShapAttribution {
    pub fn total(&self) -> f64 {
        self.phi0 + self.phi.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lf = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / lf;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / lf;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let lf = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * lf / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / lf;
        } else {
            path[j].weight = path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let lf = (l + 1) as f64;
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = next * lf / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64 / lf;
        } else {
            total += path[j].weight / zero * lf / (l - j) as f64;
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    phi: Vec<f64>,
}

impl Walker<'_> {
    fn recurse(
        &mut self,
        node: usize,
        mut path: Vec<PathElem>,
        zero: f64,
        one: f64,
        feature: Option<usize>,
    ) {
        extend(&mut path, zero, one, feature);
        match self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let e = path[i];
                    if let Some(f) = e.feature {
                        self.phi[f] += w * (e.one - e.zero) * value;
                    }
                }
            }
            Node::Split {
                feature: f,
                threshold,
                left,
                right,
                cover,
            } => {
                let (hot, cold) = if self.x[f] <= threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let (mut in_zero, mut in_one) = (1.0, 1.0);
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(f)) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(&mut path, k);
                }
                let c = cover as f64;
                let hot_frac = self.tree.nodes[hot].cover() as f64 / c;
                let cold_frac = self.tree.nodes[cold].cover() as f64 / c;
                self.recurse(hot, path.clone(), in_zero * hot_frac, in_one, Some(f));
                self.recurse(cold, path, in_zero * cold_frac, 0.0, Some(f));
            }
        }
    }
}

/// SHAP values of one tree at `x`. `n_features` sizes the output.
pub fn shap_tree(tree: &Tree, x: &[f64], n_features: usize) -> Result<ShapAttribution> {
    tree.check_covers()?;
    if tree
        .max_feature()
        .is_some_and(|f| f >= n_features || f >= x.len())
    {
        return Err(Error::Shape(format!(
            "tree uses a feature beyond the {}-wide input",
            x.len().min(n_features)
        )));
    }
    Ok(shap_tree_unchecked(tree, x, n_features))
}

fn shap_tree_unchecked(tree: &Tree, x: &[f64], n_features: usize) -> ShapAttribution {
    let mut w = Walker {
        tree,
        x,
        phi: vec![0.0; n_features],
    };
    let depth = tree.depth();
    w.recurse(0, Vec::with_capacity(depth + 2), 1.0, 1.0, None);
    ShapAttribution {
        phi: w.phi,
        phi0: tree.expected_value(),
    }
}

/// Per-sample attributions of a forest: the mean of its trees' attributions.
pub fn shap_forest(model: &ForestModel, x: &Matrix) -> Result<Vec<ShapAttribution>> {
    model.check_width(x.cols())?;
    for t in &model.trees {
        t.check_covers()?;
    }
    let p = model.n_features;
    let scale = 1.0 / model.trees.len() as f64;
    let phi0 = model.trees.iter().map(Tree::expected_value).sum::<f64>() * scale;
    Ok((0..x.rows())
        .into_par_iter()
        .map(|r| {
            let row = x.row(r);
            let mut phi = vec![0.0; p];
            for t in &model.trees {
                let a = shap_tree_unchecked(t, row, p);
                for (acc, v) in phi.iter_mut().zip(&a.phi) {
                    *acc += v;
                }
            }
            phi.iter_mut().for_each(|v| *v *= scale);
            ShapAttribution { phi, phi0 }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapRow {
    pub feature: usize,
    pub mean_abs: f64,
    pub agnostic: bool,
}

/// Features ranked by mean absolute SHAP value.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapTable {
    pub rows: Vec<ShapRow>,
    pub n_samples: usize,
}

/// Mean |phi| per feature, sorted descending with ties by index.
/// Features at or past `agnostic_start` are flagged.
pub fn mean_abs_table(
    attribs: &[ShapAttribution],
    agnostic_start: Option<usize>,
) -> Result<ShapTable> {
    let first = attribs
        .first()
        .ok_or_else(|| Error::invalid("no attributions to summarise"))?;
    let p = first.phi.len();
    let mut sums = vec![0.0; p];
    for (i, a) in attribs.iter().enumerate() {
        if a.phi.len() != p {
            return Err(Error::Shape(format!(
                "attribution {i} has {} features, expected {p}",
                a.phi.len()
            )));
        }
        for (s, v) in sums.iter_mut().zip(&a.phi) {
            *s += v.abs();
        }
    }
    let n = attribs.len() as f64;
    let mut rows: Vec<ShapRow> = sums
        .into_iter()
        .enumerate()
        .map(|(feature, s)| ShapRow {
            feature,
            mean_abs: s / n,
            agnostic: agnostic_start.is_some_and(|a| feature >= a),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_abs
            .total_cmp(&a.mean_abs)
            .then(a.feature.cmp(&b.feature))
    });
    Ok(ShapTable {
        rows,
        n_samples: attribs.len(),
    })
}

impl ShapTable {
    /// CSV with columns `rank,feature,mean_shap,agnostic`. Values use the
    /// shortest text that parses back to the same `f64`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "rank,feature,mean_shap,agnostic")?;
        for (rank, r) in self.rows.iter().enumerate() {
            writeln!(
                w,
                "{rank},feature_{},{},{}",
                r.feature, r.mean_abs, r.agnostic
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}
