//! Accuracy and ROC-AUC over node masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::predict;
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RocAuc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "roc_auc" | "rocauc" | "auc" => Ok(Metric::RocAuc),
            other => Err(Error::input(format!("unknown metric '{other}' (accuracy, roc_auc)"))),
        }
    }
}

fn check_mask(mask: &[usize], n: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::UndefinedMetric("empty mask".into()));
    }
    if let Some(&bad) = mask.iter().find(|&&i| i >= n) {
        return Err(Error::input(format!("mask index {bad} out of range for {n} nodes")));
    }
    Ok(())
}

/// Fraction of masked nodes whose prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[i64], mask: &[usize]) -> Result<f64> {
    check_mask(mask, predictions.len().min(labels.len()))?;
    let correct = mask
        .iter()
        .filter(|&&i| labels[i] >= 0 && predictions[i] == labels[i] as usize)
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half (the Mann-Whitney U statistic over `P * N`).
pub fn roc_auc(scores: &[f64], labels: &[i64], mask: &[usize]) -> Result<f64> {
    check_mask(mask, scores.len().min(labels.len()))?;
    let mut pairs = Vec::with_capacity(mask.len());
    for &i in mask {
        match labels[i] {
            0 | 1 => pairs.push((scores[i], labels[i] == 1)),
            y => return Err(Error::input(format!("roc_auc needs 0/1 labels, node {i} has {y}"))),
        }
        if !scores[i].is_finite() {
            return Err(Error::NonFinite("roc_auc scores"));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut u, mut neg_below, mut pos_total) = (0.0f64, 0u64, 0u64);
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            if pairs[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        // u accumulates whole and half counts only, so it stays exact.
        u += (pos * neg_below) as f64 + 0.5 * (pos * neg) as f64;
        neg_below += neg;
        pos_total += pos;
        i = j;
    }
    if pos_total == 0 || neg_below == 0 {
        return Err(Error::UndefinedMetric(format!(
            "roc_auc needs both classes in the mask ({pos_total} positive, {neg_below} negative)"
        )));
    }
    Ok(u / (pos_total as f64 * neg_below as f64))
}

/// Positive-class score per node: the raw logit for a single-logit head,
/// `z1 - z0` for a two-class softmax head.
pub fn binary_scores<T: Scalar>(logits: &Matrix<T>) -> Result<Vec<f64>> {
    match logits.cols() {
        1 => Ok(logits.as_slice().iter().map(|z| z.as_f64()).collect()),
        2 => Ok((0..logits.rows())
            .map(|r| logits.get(r, 1).as_f64() - logits.get(r, 0).as_f64())
            .collect()),
        c => Err(Error::input(format!(
            "roc_auc needs a binary head, logits have {c} columns"
        ))),
    }
}

/// Metric over masked nodes, in `[0, 1]`.
pub fn evaluate<T: Scalar>(logits: &Matrix<T>, labels: &[i64], mask: &[usize], metric: Metric) -> Result<f64> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension {
            what: "labels vs logits rows".into(),
            expected: logits.rows(),
            found: labels.len(),
        });
    }
    match metric {
        Metric::Accuracy => accuracy(&predict(logits), labels, mask),
        Metric::RocAuc => roc_auc(&binary_scores(logits)?, labels, mask),
    }
}
