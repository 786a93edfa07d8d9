//! CART regression trees stored as flat pre-order node arrays.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: usize,
    },
    Leaf {
        value: f64,
        cover: usize,
    },
}

impl Node {
    pub fn cover(&self) -> usize {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// A regression tree; node 0 is the root and nodes are in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Cover-weighted mean of the leaf values.
    pub fn expected_value(&self) -> f64 {
        let root = self.root().cover() as f64;
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { value, cover } => Some(value * cover as f64),
                Node::Split { .. } => None,
            })
            .sum::<f64>()
            / root
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, .. } => Some(feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Checks child links and that child covers sum to the parent cover.
    pub fn check_covers(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("tree has no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { cover: 0, .. } => {
                    return Err(Error::Validation(format!("node {i}: zero cover")));
                }
                Node::Leaf { .. } => {}
                Node::Split {
                    left, right, cover, ..
                } => {
                    if left <= i
                        || right <= i
                        || left >= self.nodes.len()
                        || right >= self.nodes.len()
                    {
                        return Err(Error::Validation(format!("node {i}: bad child links")));
                    }
                    let sum = self.nodes[left].cover() + self.nodes[right].cover();
                    if sum != cover || cover == 0 {
                        return Err(Error::Validation(format!(
                            "node {i}: cover {cover} but children sum to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) struct GrowParams {
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub n_candidates: usize,
}

pub(crate) struct Grower<'a, R> {
    x: &'a Matrix,
    y: &'a [f64],
    params: GrowParams,
    rng: R,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a, R: Rng> Grower<'a, R> {
    pub fn new(x: &'a Matrix, y: &'a [f64], params: GrowParams, rng: R) -> Self {
        Self {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
            scratch: Vec::new(),
        }
    }

    /// Grows a tree over `rows` (which may contain repeats).
    pub fn grow(mut self, rows: &mut [usize]) -> Tree {
        self.build(rows, 0);
        Tree { nodes: self.nodes }
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        let (mut lo, mut hi, mut sum, mut sq) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0);
        for &r in rows.iter() {
            let v = self.y[r];
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
            sq += v * v;
        }
        let id = self.nodes.len();
        let value = if lo == hi {
            lo
        } else {
            (sum / n as f64).clamp(lo, hi)
        };
        self.nodes.push(Node::Leaf { value, cover: n });

        let stop = n < 2 * self.params.min_samples_leaf
            || self.params.max_depth.is_some_and(|d| depth >= d)
            || lo == hi;
        if stop {
            return id;
        }
        let parent_sse = (sq - sum * sum / n as f64).max(0.0);
        let Some(best) = self.best_split(rows, sum, parent_sse) else {
            return id;
        };

        let mut split = 0;
        for i in 0..n {
            if self.x.get(rows[i], best.feature) <= best.threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        debug_assert!(
            split >= self.params.min_samples_leaf && n - split >= self.params.min_samples_leaf
        );
        let (l_rows, r_rows) = rows.split_at_mut(split);
        let left = self.build(l_rows, depth + 1);
        let right = self.build(r_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            cover: n,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], total: f64, parent_sse: f64) -> Option<BestSplit> {
        let n = rows.len();
        let p = self.x.cols();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let k = self.params.n_candidates.clamp(1, p);
        let candidates = index::sample(&mut self.rng, p, k);
        let tol = parent_sse * 1e-12;
        let mut best: Option<BestSplit> = None;

        for f in candidates.iter() {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&r| (self.x.get(r, f), self.y[r])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue;
            }
            let base = total * total / n as f64;
            let mut left_sum = 0.0;
            for i in 0..n - min_leaf {
                left_sum += self.scratch[i].1;
                let n_left = i + 1;
                if n_left < min_leaf || self.scratch[i].0 == self.scratch[i + 1].0 {
                    continue;
                }
                let n_right = n - n_left;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - base;
                if gain > tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (a, b) = (self.scratch[i].0, self.scratch[i + 1].0);
                    let mid = a + (b - a) / 2.0;
                    best = Some(BestSplit {
                        feature: f,
                        threshold: if mid < b { mid } else { a },
                        gain,
                    });
                }
            }
        }
        best
    }
}
