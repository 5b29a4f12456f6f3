//! Classification metrics: confusion counts, one-vs-rest precision/recall/F1,
//! ROC curves and AUC, macro averaged over the four classes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subtype::{Subtype, NUM_CLASSES};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    pub fn one_vs_rest(&self, k: usize) -> BinaryCounts {
        let tp = self.counts[k][k];
        let row: u64 = self.counts[k].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[k]).sum();
        BinaryCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }
}

fn check_label(k: usize) -> Result<usize> {
    if k < NUM_CLASSES {
        Ok(k)
    } else {
        Err(Error::LabelOutOfRange(k))
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension {
            op: "confusion",
            left: (y_true.len(), 1),
            right: (y_pred.len(), 1),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.counts[check_label(t)?][check_label(p)?] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::DegenerateInput("accuracy of an empty confusion matrix".into())),
        n => Ok(cm.correct() as f64 / n as f64),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall, f1)` for class `k`; zero denominators give 0.
pub fn prf1(cm: &ConfusionMatrix, k: usize) -> (f64, f64, f64) {
    let c = cm.one_vs_rest(k);
    (
        ratio(c.tp, c.tp + c.fp),
        ratio(c.tp, c.tp + c.fn_),
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Cases with score `>= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: u64,
    pub fp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From `(0, 0)` at threshold `+inf` to `(1, 1)` at the lowest score.
    pub points: Vec<RocPoint>,
    pub positives: u64,
    pub negatives: u64,
}

/// Threshold sweep over the unique scores in descending order. Tied scores
/// share one point.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "roc_curve",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateInput(format!(
            "ROC needs both classes, got {positives} positive and {negatives} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let point = |threshold, tp: u64, fp: u64| RocPoint {
        threshold,
        fpr: fp as f64 / negatives as f64,
        tpr: tp as f64 / positives as f64,
        tp,
        fp,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(rank + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            points.push(point(scores[i], tp, fp));
        }
    }
    Ok(RocCurve {
        points,
        positives,
        negatives,
    })
}

/// Trapezoidal area under the curve, accumulated in integer counts so the
/// result is a single rounding of the exact rational value.
pub fn auc(curve: &RocCurve) -> f64 {
    let twice_area: u64 = curve
        .points
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) * (w[1].tp + w[0].tp))
        .sum();
    twice_area as f64 / (2 * curve.positives * curve.negatives) as f64
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Subtype,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the evaluated set lacks positives or negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean over the classes whose AUC is defined.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub roc: Vec<Option<RocCurve>>,
}

impl MetricsReport {
    /// Macro AUC, or 0 when no class has a defined AUC.
    pub fn macro_auc(&self) -> f64 {
        self.macro_avg.auc.unwrap_or(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Confusion matrix as CSV with a header row of predicted labels.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in Subtype::ALL {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (c, row) in Subtype::ALL.iter().zip(&self.confusion.counts) {
            write!(s, "{c}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Builds the full report from labels and per-case class probabilities.
pub fn report(y_true: &[usize], probabilities: &[[f64; NUM_CLASSES]]) -> Result<MetricsReport> {
    if y_true.len() != probabilities.len() {
        return Err(Error::Dimension {
            op: "report",
            left: (y_true.len(), 1),
            right: (probabilities.len(), NUM_CLASSES),
        });
    }
    if y_true.is_empty() {
        return Err(Error::DegenerateInput("report on an empty set".into()));
    }
    for (i, row) in probabilities.iter().enumerate() {
        if let Some(&value) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, value });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateInput(format!("probability row {i} sums to {sum}")));
        }
    }
    let y_pred: Vec<usize> = probabilities.iter().map(|r| argmax(r)).collect();
    let cm = confusion(y_true, &y_pred)?;

    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    let mut roc = Vec::with_capacity(NUM_CLASSES);
    for (k, label) in Subtype::ALL.into_iter().enumerate() {
        let scores: Vec<f64> = probabilities.iter().map(|r| r[k]).collect();
        let positive: Vec<bool> = y_true.iter().map(|&t| t == k).collect();
        let curve = match roc_curve(&scores, &positive) {
            Ok(c) => Some(c),
            Err(Error::DegenerateInput(_)) => None,
            Err(e) => return Err(e),
        };
        let (precision, recall, f1) = prf1(&cm, k);
        per_class.push(ClassMetrics {
            label,
            precision,
            recall,
            f1,
            auc: curve.as_ref().map(auc),
        });
        roc.push(curve);
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    let aucs: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
    let macro_avg = MacroMetrics {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
    };
    Ok(MetricsReport {
        accuracy: accuracy(&cm)?,
        macro_avg,
        per_class,
        confusion: cm,
        roc,
    })
}

/// `threshold,fpr,tpr` rows; the first threshold is written as `inf`.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    s
}

/// Rate as a percentage with two decimals, e.g. `0.8312 -> "83.12%"`.
pub fn percent(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}
