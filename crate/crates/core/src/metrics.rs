//! Ranking metrics: AUROC, AUPR (average precision), and top-k recall.
//!
//! All three are pure functions over score/label slices. AUROC uses the
//! rank formulation with averaged tie ranks, which equals pairwise
//! counting with ties worth one half; the test suite checks that equality
//! against brute-force pair enumeration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), truth.len(), "auroc: length mismatch");
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if truth[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Average precision: mean of the precision values at each rank where a
/// positive is retrieved, scanning by descending score with ties broken
/// toward the lower index.
pub fn aupr(scores: &[f64], truth: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), truth.len(), "aupr: length mismatch");
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum_precision = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if truth[idx] {
            hits += 1;
            sum_precision += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum_precision / positives as f64)
}

/// Mean over samples (with at least one positive) of
/// `|top-k(scores) ∩ positives| / |positives|`. `scores` and `truth` are
/// `[B, n_labels]` row-major; top-k ties break toward the lower index.
pub fn topk_recall(scores: &[f64], truth: &[bool], n_labels: usize, k: usize) -> Result<f64> {
    assert_eq!(scores.len(), truth.len(), "topk_recall: length mismatch");
    assert!(n_labels > 0 && scores.len().is_multiple_of(n_labels));
    assert!(k >= 1, "topk_recall: k must be at least 1");
    if k > n_labels {
        return Err(Error::KTooLarge { k, n: n_labels });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for row in 0..scores.len() / n_labels {
        let s = &scores[row * n_labels..(row + 1) * n_labels];
        let t = &truth[row * n_labels..(row + 1) * n_labels];
        let positives = t.iter().filter(|&&x| x).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..n_labels).collect();
        order.sort_by(|&a, &b| {
            s[b].partial_cmp(&s[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let hit = order[..k].iter().filter(|&&idx| t[idx]).count();
        total += hit as f64 / positives as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::NoPositives);
    }
    Ok(total / counted as f64)
}

/// Per-split evaluation results, serialized flat. Fields that do not apply
/// to a task (top-k recall for binary labels) stay null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub recall_at_10: Option<f64>,
    pub recall_at_20: Option<f64>,
    pub recall_at_30: Option<f64>,
    pub loss: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        match k {
            10 => self.recall_at_10,
            20 => self.recall_at_20,
            30 => self.recall_at_30,
            _ => None,
        }
    }
}
