//! Binary classification metrics (positive class = ill = 1) and their
//! aggregation over cross-validation folds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn check(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Metric("empty confusion matrix".into())),
            n => Ok(n as f64),
        }
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::shape("predictions", labels.len(), predictions.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y != 0, p != 0) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

// Zero denominators yield 0 rather than NaN so fold averages stay defined.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok((cm.tp + cm.tn) as f64 / cm.check()?)
}

pub fn precision(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check()?;
    Ok(ratio(cm.tp, cm.tp + cm.fp))
}

pub fn recall(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check()?;
    Ok(ratio(cm.tp, cm.tp + cm.fn_))
}

pub fn f1(cm: &ConfusionMatrix) -> Result<f64> {
    let (p, r) = (precision(cm)?, recall(cm)?);
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Area under the ROC curve as the normalized Mann-Whitney U statistic:
/// the probability that a random ill sample outscores a random healthy one,
/// ties counting one half. Uses mid-ranks, O(n log n).
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::shape("scores", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes, got {n_pos} ill and {n_neg} healthy"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (doubled) mid-ranks of the positives; doubling keeps it integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2
        let mid2 = (i + j + 2) as u128;
        let pos = order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        rank_sum2 += pos * mid2;
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg as u128) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl FoldMetrics {
    /// Metrics of hard predictions plus ill-class scores for one fold.
    pub fn compute(fold: usize, labels: &[u8], predictions: &[u8], scores: &[f64], loss: f64) -> Result<Self> {
        let cm = confusion(labels, predictions)?;
        Ok(FoldMetrics {
            fold,
            accuracy: accuracy(&cm)?,
            auc: auc(labels, scores)?,
            loss,
            precision: precision(&cm)?,
            recall: recall(&cm)?,
            f1: f1(&cm)?,
        })
    }

    fn columns(&self) -> [f64; 6] {
        [self.accuracy, self.auc, self.loss, self.precision, self.recall, self.f1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAverages {
    pub accuracy: f64,
    pub auc: f64,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldMetrics>,
    pub averages: MetricAverages,
}

pub const REPORT_HEADER: [&str; 7] = ["CV Fold", "Accuracy", "AUC", "Loss", "Precision", "Recall", "F1-Score"];

pub fn aggregate(per_fold: &[FoldMetrics]) -> Result<CvReport> {
    if per_fold.is_empty() {
        return Err(Error::Aggregation("no fold metrics to aggregate".into()));
    }
    let n = per_fold.len() as f64;
    let mut sums = [0.0; 6];
    for f in per_fold {
        for (s, v) in sums.iter_mut().zip(f.columns()) {
            *s += v;
        }
    }
    let [accuracy, auc, loss, precision, recall, f1] = sums.map(|s| s / n);
    Ok(CvReport {
        folds: per_fold.to_vec(),
        averages: MetricAverages {
            accuracy,
            auc,
            loss,
            precision,
            recall,
            f1,
        },
    })
}

impl CvReport {
    /// Table with one row per fold and a final `Avg.` row, six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_HEADER.join(",");
        out.push('\n');
        let mut row = |label: String, cols: [f64; 6]| {
            out.push_str(&label);
            for c in cols {
                let _ = write!(out, ",{c:.6}");
            }
            out.push('\n');
        };
        for f in &self.folds {
            row(f.fold.to_string(), f.columns());
        }
        let a = &self.averages;
        row("Avg.".into(), [a.accuracy, a.auc, a.loss, a.precision, a.recall, a.f1]);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-fold metric series, one row per fold, for plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("fold,accuracy,auc,loss,precision,recall,f1\n");
        for f in &self.folds {
            let _ = write!(out, "{}", f.fold);
            for c in f.columns() {
                let _ = write!(out, ",{c:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.csv`, `report.json` and `plotdata.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (name, body) in [
            ("report.csv", self.to_csv()),
            ("report.json", self.to_json()),
            ("plotdata.csv", self.plot_data()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}
