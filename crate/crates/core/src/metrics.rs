//! Accuracy, AUROC, ECE, the with/without-agnostic gap and ablation counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub acc: f64,
    pub auroc: f64,
    pub ece: f64,
    pub n: usize,
    /// Rows whose thresholded score matched the label.
    pub n_correct: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPerf {
    pub acc: f64,
    pub auroc: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCounts {
    /// |L1 \ L2|: correct without agnostic features, wrong with them.
    pub correct_turned_incorrect: usize,
    /// |L2 \ L1|: wrong without, correct with.
    pub new_correct: usize,
    pub n: usize,
}

fn check_pair(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    if let Some(v) = labels.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("labels must be 0 or 1, found {v}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    Ok(())
}

fn hits<'a>(
    scores: &'a [f64],
    labels: &'a [f64],
    threshold: f64,
) -> impl Iterator<Item = bool> + 'a {
    scores
        .iter()
        .zip(labels)
        .map(move |(&s, &l)| (s >= threshold) == (l == 1.0))
}

pub fn accuracy(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    check_pair(scores, labels)?;
    Ok(hits(scores, labels, threshold).filter(|&h| h).count() as f64 / scores.len() as f64)
}

/// Mann-Whitney AUROC from average ranks; tied pairs count one half.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based ranks of positives, doubled so tie midpoints stay integral.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as u128;
        // Average rank of the group is (i + 1 + j + 1) / 2.
        rank_sum_x2 += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * q) as f64)
}

/// Equal-width reliability ECE over `[0, 1]`; the last bin is closed on the right.
pub fn ece(scores: &[f64], labels: &[f64], n_bins: usize) -> Result<f64> {
    check_pair(scores, labels)?;
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be > 0"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("score {s} outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut score_sum = vec![0.0; n_bins];
    let mut label_sum = vec![0.0; n_bins];
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * n_bins as f64) as usize).min(n_bins - 1);
        count[b] += 1;
        score_sum[b] += s;
        label_sum[b] += l;
    }
    let n = scores.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (label_sum[b] / c - score_sum[b] / c).abs()
        })
        .sum())
}

pub fn evaluate(
    scores: &[f64],
    labels: &[f64],
    threshold: f64,
    n_bins: usize,
) -> Result<EvalResult> {
    let acc = accuracy(scores, labels, threshold)?;
    Ok(EvalResult {
        acc,
        auroc: auroc(scores, labels)?,
        ece: ece(scores, labels, n_bins)?,
        n: scores.len(),
        n_correct: hits(scores, labels, threshold).filter(|&h| h).count(),
        threshold,
    })
}

/// `Perf(hidden + agnostic) - Perf(hidden)` for each metric.
pub fn delta_perf(with_agnostic: &EvalResult, without: &EvalResult) -> Result<DeltaPerf> {
    if with_agnostic.n != without.n {
        return Err(Error::Shape(format!(
            "results cover {} and {} samples",
            with_agnostic.n, without.n
        )));
    }
    Ok(DeltaPerf {
        acc: with_agnostic.acc - without.acc,
        auroc: with_agnostic.auroc - without.auroc,
        ece: with_agnostic.ece - without.ece,
    })
}

pub fn ablation_counts(
    scores_without: &[f64],
    scores_with: &[f64],
    labels: &[f64],
    threshold: f64,
) -> Result<AblationCounts> {
    check_pair(scores_without, labels)?;
    check_pair(scores_with, labels)?;
    let mut counts = AblationCounts {
        correct_turned_incorrect: 0,
        new_correct: 0,
        n: labels.len(),
    };
    for (a, b) in hits(scores_without, labels, threshold).zip(hits(scores_with, labels, threshold))
    {
        match (a, b) {
            (true, false) => counts.correct_turned_incorrect += 1,
            (false, true) => counts.new_correct += 1,
            _ => {}
        }
    }
    Ok(counts)
}

impl AblationCounts {
    /// The accuracy change these counts imply.
    pub fn implied_delta_acc(&self) -> f64 {
        (self.new_correct as f64 - self.correct_turned_incorrect as f64) / self.n as f64
    }

    /// `n_correct(with) - n_correct(without) == new - lost`.
    pub fn consistent_with(&self, with: &EvalResult, without: &EvalResult) -> bool {
        with.n == self.n
            && without.n == self.n
            && with.n_correct as i64 - without.n_correct as i64
                == self.new_correct as i64 - self.correct_turned_incorrect as i64
    }
}
