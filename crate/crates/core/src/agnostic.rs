//! Data-agnostic features computed from output-distribution signals.
//!
//! Multiple-choice: softmax over the four choice logits, sorted descending,
//! followed by the entropy of that distribution. Short-form:
//! `[Avg(-log p), Max(-log p), Avg(H), Max(H)]` over the generated tokens.
//! All logarithms are natural.

use crate::dataset::{DatasetBundle, SampleSignals, TaskType, N_CHOICES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::*;

/// Fixed-order agnostic feature vector (length 5 or 4).
#[derive(Debug, Clone, PartialEq)]
pub struct AgnosticVector(pub Vec<f64>);

impl AgnosticVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Column names in the order produced by [`mc_features`] / [`sf_features`].
pub fn feature_names(task: TaskType) -> &'static [&'static str] {
    match task {
        TaskType::MultipleChoice => &["p1", "p2", "p3", "p4", "entropy"],
        TaskType::ShortForm => &["avg_neg_logp", "max_neg_logp", "avg_entropy", "max_entropy"],
    }
}

pub fn mc_features(choice_logits: &[f64]) -> Result<AgnosticVector> {
    if choice_logits.len() != N_CHOICES {
        return Err(Error::invalid(format!(
            "expected {N_CHOICES} choice logits, got {}",
            choice_logits.len()
        )));
    }
    if choice_logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("non-finite choice logit"));
    }
    let max = choice_logits
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = choice_logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    probs.sort_by(|a, b| b.total_cmp(a));

    let entropy: f64 = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    // Rounding can push a uniform distribution a hair past ln 4, or a one-hot below 0.
    let entropy = entropy.clamp(0.0, (N_CHOICES as f64).ln());

    probs.push(entropy);
    Ok(AgnosticVector(probs))
}

pub fn sf_features(token_logprobs: &[f64], token_entropies: &[f64]) -> Result<AgnosticVector> {
    if token_logprobs.is_empty() || token_entropies.is_empty() {
        return Err(Error::invalid("empty token arrays"));
    }
    if token_logprobs.len() != token_entropies.len() {
        return Err(Error::invalid(format!(
            "token_logprobs has {} entries, token_entropies has {}",
            token_logprobs.len(),
            token_entropies.len()
        )));
    }
    let nll: Vec<f64> = token_logprobs.iter().map(|lp| 0.0 - lp).collect();
    let (nll_avg, nll_max) = avg_max(&nll);
    let (h_avg, h_max) = avg_max(token_entropies);
    Ok(AgnosticVector(vec![nll_avg, nll_max, h_avg, h_max]))
}

/// Mean (kept within the observed range) and maximum of a non-empty list.
fn avg_max(v: &[f64]) -> (f64, f64) {
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for &x in v {
        sum += x;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    ((sum / v.len() as f64).clamp(lo, hi), hi)
}

pub fn sample_features(task: TaskType, s: &SampleSignals) -> Result<AgnosticVector> {
    let with_id = |e: Error| Error::Validation(format!("sample {:?}: {e}", s.id));
    match task {
        TaskType::MultipleChoice => {
            let z = s
                .choice_logits
                .as_deref()
                .ok_or_else(|| with_id(Error::invalid("missing choice_logits")))?;
            mc_features(z).map_err(with_id)
        }
        TaskType::ShortForm => {
            let (Some(lp), Some(h)) = (&s.token_logprobs, &s.token_entropies) else {
                return Err(with_id(Error::invalid("missing token arrays")));
            };
            sf_features(lp, h).map_err(with_id)
        }
    }
}

/// `n x m` agnostic feature matrix for a bundle, rows in sample order.
pub fn batch_features(bundle: &DatasetBundle) -> Result<Matrix> {
    let task = bundle.task_type();
    let rows = bundle
        .signals
        .par_iter()
        .map(|s| sample_features(task, s).map(|v| v.0))
        .collect::<Vec<Result<Vec<f64>>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let m = Matrix::from_rows(&rows)?;
    debug_assert_eq!(m.cols(), task.agnostic_arity());
    Ok(m)
}
