//! Evaluation metrics for multi-label prediction: macro/micro AUC-ROC,
//! macro/micro F1, and precision-at-k.
//!
//! Conventions are pinned for determinism: AUC counts tied pairs as 1/2
//! (exact Mann-Whitney, not a trapezoid approximation); macro AUC skips
//! labels whose gold column is all-0 or all-1 while macro F1 counts every
//! label with 0/0 -> 0; top-k ties break toward the lower label index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and gold labels for a batch of documents, row-major
/// `n_docs x n_labels`.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    n_docs: usize,
    n_labels: usize,
    scores: Vec<f64>,
    gold: Vec<bool>,
}

impl PredictionSet {
    pub fn new(n_docs: usize, n_labels: usize, scores: Vec<f64>, gold: Vec<bool>) -> Result<Self> {
        if scores.len() != n_docs * n_labels || gold.len() != scores.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction set needs {} cells, got {} scores and {} gold",
                n_docs * n_labels,
                scores.len(),
                gold.len()
            )));
        }
        if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!(
                "scores must lie in [0, 1], found {bad}"
            )));
        }
        Ok(PredictionSet {
            n_docs,
            n_labels,
            scores,
            gold,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn score(&self, doc: usize, label: usize) -> f64 {
        self.scores[doc * self.n_labels + label]
    }

    pub fn gold(&self, doc: usize, label: usize) -> bool {
        self.gold[doc * self.n_labels + label]
    }

    fn label_column(&self, label: usize) -> (Vec<f64>, Vec<bool>) {
        let scores = (0..self.n_docs).map(|d| self.score(d, label)).collect();
        let gold = (0..self.n_docs).map(|d| self.gold(d, label)).collect();
        (scores, gold)
    }
}

/// Exact pairwise-ranking AUC: the fraction of (positive, negative)
/// pairs ranked correctly, ties counted 1/2. `None` when the labels are
/// degenerate (all positive or all negative).
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }

    // Average ranks over tie groups; the rank-sum form of the pairwise
    // count stays O(n log n).
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Some(u / (p * negatives as f64))
}

/// Label-averaged and pooled AUC. Degenerate labels are skipped by the
/// macro average; if every label is degenerate the macro side is `None`.
pub fn macro_micro_auc(preds: &PredictionSet) -> (Option<f64>, Option<f64>) {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for label in 0..preds.n_labels {
        let (scores, gold) = preds.label_column(label);
        if let Some(auc) = auc_binary(&scores, &gold) {
            sum += auc;
            counted += 1;
        }
    }
    let macro_auc = (counted > 0).then(|| sum / counted as f64);
    let micro_auc = auc_binary(&preds.scores, &preds.gold);
    (macro_auc, micro_auc)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 after binarizing at `threshold` (predicted positive when
/// score >= threshold). Micro pools counts over every (doc, label) cell;
/// macro averages per-label F1 over all labels with 0/0 -> 0.
pub fn macro_micro_f1(preds: &PredictionSet, threshold: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut macro_sum = 0.0;
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for label in 0..preds.n_labels {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for doc in 0..preds.n_docs {
            let predicted = preds.score(doc, label) >= threshold;
            match (predicted, preds.gold(doc, label)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        macro_sum += f1(tp, fp, fn_);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let macro_f1 = if preds.n_labels == 0 {
        0.0
    } else {
        macro_sum / preds.n_labels as f64
    };
    Ok((macro_f1, f1(tp_all, fp_all, fn_all)))
}

/// Indices of the k highest-scoring labels, ties broken by ascending
/// label index. The prediction command uses the same ordering.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Mean over documents of the fraction of the k top-scored labels that
/// are gold-positive.
pub fn precision_at_k(preds: &PredictionSet, k: usize) -> Result<f64> {
    if k == 0 || k > preds.n_labels {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            preds.n_labels
        )));
    }
    if preds.n_docs == 0 {
        return Err(Error::InvalidArgument("no documents to score".into()));
    }
    let mut total = 0.0;
    for doc in 0..preds.n_docs {
        let row = &preds.scores[doc * preds.n_labels..(doc + 1) * preds.n_labels];
        let hits = top_k_indices(row, k)
            .into_iter()
            .filter(|&label| preds.gold(doc, label))
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / preds.n_docs as f64)
}

/// The report emitted by evaluation. Macro/micro AUC are `null` when
/// every label (resp. the pooled set) is degenerate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub p_at_k: f64,
    pub k: usize,
    pub n_docs: usize,
    pub n_labels: usize,
}

/// Runs the whole metric suite at one threshold and cut-off.
pub fn report(preds: &PredictionSet, threshold: f64, k: usize) -> Result<MetricsReport> {
    let (macro_auc, micro_auc) = macro_micro_auc(preds);
    let (macro_f1, micro_f1) = macro_micro_f1(preds, threshold)?;
    let p_at_k = precision_at_k(preds, k)?;
    Ok(MetricsReport {
        macro_auc,
        micro_auc,
        macro_f1,
        micro_f1,
        p_at_k,
        k,
        n_docs: preds.n_docs,
        n_labels: preds.n_labels,
    })
}
