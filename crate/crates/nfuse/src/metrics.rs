//! ROC/AUC machinery: binary AUC via rank statistics, one-vs-rest, micro
//! and macro averaging, ROC curves, and precision/recall.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-example 3-class probability rows plus true class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    probs: Vec<[f64; 3]>,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(probs: Vec<[f64; 3]>, labels: Vec<usize>) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::shape_mismatch("prediction set", probs.len(), labels.len()));
        }
        for (i, row) in probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "probability row {i} sums to {sum}, not 1"
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 2) {
            return Err(Error::InvalidArgument(format!("class index {bad} out of range")));
        }
        Ok(PredictionSet { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn probs(&self) -> &[[f64; 3]] {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Rank-based (Mann-Whitney) AUC: P(score_pos > score_neg) + 0.5 P(tie).
/// None when either class is missing — undefined, never reported as 0.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups (1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC per class: class c scored by probability column c against
/// membership in c. Missing classes yield None entries.
pub fn auc_ovr(preds: &PredictionSet) -> [Option<f64>; 3] {
    let mut out = [None; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let scores: Vec<f64> = preds.probs.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = preds.labels.iter().map(|&l| l == c).collect();
        *slot = auc_binary(&scores, &pos);
    }
    out
}

/// Micro-average AUC: pool every (probability, one-hot indicator) pair
/// across classes and examples into one binary problem.
pub fn auc_micro(preds: &PredictionSet) -> Option<f64> {
    let mut scores = Vec::with_capacity(preds.len() * 3);
    let mut pos = Vec::with_capacity(preds.len() * 3);
    for (row, &label) in preds.probs.iter().zip(&preds.labels) {
        for (c, &p) in row.iter().enumerate() {
            scores.push(p);
            pos.push(c == label);
        }
    }
    auc_binary(&scores, &pos)
}

/// Macro-average AUC: arithmetic mean of the one-vs-rest AUCs; absent when
/// any class is missing.
pub fn auc_macro(preds: &PredictionSet) -> Option<f64> {
    let ovr = auc_ovr(preds);
    if ovr.iter().any(|a| a.is_none()) {
        return None;
    }
    Some(ovr.iter().map(|a| a.unwrap()).sum::<f64>() / 3.0)
}

/// One ROC operating point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve thresholded at every distinct score, descending; starts at
/// (0,0) and ends at (1,1). None when either class is missing.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<Vec<RocPoint>> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        i = j;
    }
    Some(points)
}

/// Trapezoidal area under an ROC point list.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Per-class precision and recall under argmax decisions (lowest class
/// index wins ties). Precision is absent for classes never predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionRecall {
    pub precision: [Option<f64>; 3],
    pub recall: [Option<f64>; 3],
}

pub fn argmax_decision(row: &[f64; 3]) -> usize {
    let mut best = 0;
    for c in 1..3 {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

pub fn precision_recall(preds: &PredictionSet) -> PrecisionRecall {
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fn_ = [0usize; 3];
    for (row, &label) in preds.probs.iter().zip(&preds.labels) {
        let decision = argmax_decision(row);
        if decision == label {
            tp[label] += 1;
        } else {
            fp[decision] += 1;
            fn_[label] += 1;
        }
    }
    let mut precision = [None; 3];
    let mut recall = [None; 3];
    for c in 0..3 {
        let predicted = tp[c] + fp[c];
        if predicted > 0 {
            precision[c] = Some(tp[c] as f64 / predicted as f64);
        }
        let actual = tp[c] + fn_[c];
        if actual > 0 {
            // a class never predicted still has recall (0 when tp = 0)
            recall[c] = Some(tp[c] as f64 / actual as f64);
        }
    }
    PrecisionRecall { precision, recall }
}

/// The Table-2-shaped report row: three one-vs-rest AUCs, micro, macro,
/// plus the ROC point lists behind them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AucReport {
    pub cn_vs_all: Option<f64>,
    pub mci_vs_all: Option<f64>,
    pub ad_vs_all: Option<f64>,
    pub micro: Option<f64>,
    pub macro_avg: Option<f64>,
    #[serde(skip)]
    pub curves: Vec<(String, Vec<RocPoint>)>,
}

impl AucReport {
    pub fn from_predictions(preds: &PredictionSet) -> Self {
        let ovr = auc_ovr(preds);
        let mut curves = Vec::new();
        for (c, name) in ["cn_vs_all", "mci_vs_all", "ad_vs_all"].iter().enumerate() {
            let scores: Vec<f64> = preds.probs.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = preds.labels.iter().map(|&l| l == c).collect();
            if let Some(curve) = roc_curve(&scores, &pos) {
                curves.push((name.to_string(), curve));
            }
        }
        // pooled micro curve
        let mut scores = Vec::new();
        let mut pos = Vec::new();
        for (row, &label) in preds.probs.iter().zip(&preds.labels) {
            for (c, &p) in row.iter().enumerate() {
                scores.push(p);
                pos.push(c == label);
            }
        }
        if let Some(curve) = roc_curve(&scores, &pos) {
            curves.push(("micro".to_string(), curve));
        }
        AucReport {
            cn_vs_all: ovr[0],
            mci_vs_all: ovr[1],
            ad_vs_all: ovr[2],
            micro: auc_micro(preds),
            macro_avg: auc_macro(preds),
            curves,
        }
    }

    pub fn columns(&self) -> [Option<f64>; 5] {
        [self.cn_vs_all, self.mci_vs_all, self.ad_vs_all, self.micro, self.macro_avg]
    }
}

/// Report JSON: the five AUC columns, null where undefined.
pub fn write_auc_report_json(path: &std::path::Path, report: &AucReport) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, report)?;
    Ok(())
}

pub fn read_auc_report_json(path: &std::path::Path) -> Result<AucReport> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(file)?)
}

/// ROC CSV: curve, fpr, tpr — every operating point of every curve.
pub fn write_roc_csv(path: &std::path::Path, curves: &[(String, Vec<RocPoint>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["curve", "fpr", "tpr"])?;
    for (name, points) in curves {
        for p in points {
            w.write_record([name.as_str(), &format!("{:.6}", p.fpr), &format!("{:.6}", p.tpr)])?;
        }
    }
    w.flush()?;
    Ok(())
}
