use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MlError;

/// One held-out prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub true_class: usize,
    pub predicted: usize,
    pub proba: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub wauc: f64,
    pub w_precision: f64,
    pub w_recall: f64,
    pub f1: f64,
    pub predictions: Vec<Prediction>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest ROC AUC with ties counted as one half, via midranks.
/// `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    Some((rank_sum - (p * (p + 1)) as f64 / 2.0) / (p as f64 * n as f64))
}

/// Pooled metrics. Weighted averages use true-class support; precision of a
/// class never predicted is 0. Classes whose AUC is undefined are left out
/// of the WAUC average (0.5 if none remain).
pub fn metrics(predictions: Vec<Prediction>, n_classes: usize) -> Result<EvalResult, MlError> {
    if predictions.is_empty() {
        return Err(MlError::EmptyPredictions);
    }
    let total = predictions.len() as f64;
    let mut support = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut hits = vec![0usize; n_classes];
    for p in &predictions {
        support[p.true_class] += 1;
        predicted[p.predicted] += 1;
        if p.true_class == p.predicted {
            hits[p.true_class] += 1;
        }
    }
    let accuracy = hits.iter().sum::<usize>() as f64 / total;
    let mut w_precision = 0.0;
    let mut w_recall = 0.0;
    let mut auc_sum = 0.0;
    let mut auc_weight = 0.0;
    for c in 0..n_classes {
        if support[c] == 0 {
            continue;
        }
        let weight = support[c] as f64 / total;
        if predicted[c] > 0 {
            w_precision += weight * hits[c] as f64 / predicted[c] as f64;
        }
        w_recall += weight * hits[c] as f64 / support[c] as f64;
        let scores: Vec<f64> = predictions.iter().map(|p| p.proba[c]).collect();
        let positive: Vec<bool> = predictions.iter().map(|p| p.true_class == c).collect();
        if let Some(auc) = binary_auc(&scores, &positive) {
            auc_sum += support[c] as f64 * auc;
            auc_weight += support[c] as f64;
        }
    }
    let wauc = if auc_weight > 0.0 { auc_sum / auc_weight } else { 0.5 };
    Ok(EvalResult { accuracy, wauc, w_precision, w_recall, f1: f1_score(w_precision, w_recall), predictions })
}
