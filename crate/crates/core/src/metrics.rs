//! Detection metrics with `Abnormal` as the positive class.

use crate::label::Label;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{predicted} predictions for {truth} ground-truth labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("{0} is undefined: zero denominator")]
    UndefinedRate(&'static str),
    #[error("ROC needs both classes in the ground truth")]
    SingleClass,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("fpr_max must lie in (0, 1], got {0}")]
    InvalidFprMax(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Abnormal, Label::Abnormal) => self.tp += 1,
            (Label::Abnormal, Label::Normal) => self.fp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Normal, Label::Abnormal) => self.fn_ += 1,
        }
    }
}

pub fn confusion(predicted: &[Label], truth: &[Label]) -> Result<ConfusionCounts, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        c.add(p, t);
    }
    Ok(c)
}

fn ratio(num: usize, den: usize, what: &'static str) -> Result<f64, MetricsError> {
    if den == 0 {
        Err(MetricsError::UndefinedRate(what))
    } else {
        Ok(num as f64 / den as f64)
    }
}

/// False alarm rate `fp / (fp + tn)`.
pub fn far(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.fp, c.fp + c.tn, "FAR")
}

/// Missed detection rate `fn / (fn + tp)`.
pub fn mdr(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.fn_, c.fn_ + c.tp, "MDR")
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.tp + c.tn, c.total(), "accuracy")
}

/// Precision, recall and F1 for one class taken as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn class_scores(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

/// Scores for `[Normal, Abnormal]`, each class treated as positive in turn.
/// Zero denominators count as 0.
pub fn per_class(c: &ConfusionCounts) -> [ClassScores; 2] {
    [class_scores(c.tn, c.fn_, c.fp), class_scores(c.tp, c.fp, c.fn_)]
}

/// Unweighted means over both classes: (precision, recall, F1). Macro-F1 is
/// the mean of the per-class F1 values.
pub fn macro_prf(c: &ConfusionCounts) -> (f64, f64, f64) {
    let [n, a] = per_class(c);
    (
        0.5 * (n.precision + a.precision),
        0.5 * (n.recall + a.recall),
        0.5 * (n.f1 + a.f1),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (fpr, tpr) from (0, 0) to (1, 1)
    pub points: Vec<(f64, f64)>,
    /// Score at which each point after the first is reached.
    pub thresholds: Vec<f64>,
}

/// Threshold sweep over distinct scores, highest first. Samples sharing a
/// score move together, so the curve does not depend on input order.
pub fn roc(scores: &[f64], truth: &[Label]) -> Result<RocCurve, MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { predicted: scores.len(), truth: truth.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let pos = truth.iter().filter(|l| l.is_abnormal()).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]].is_abnormal() {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(s);
    }
    Ok(RocCurve { points, thresholds })
}

impl RocCurve {
    /// Trapezoidal area under the curve for fpr in [0, fpr_max], with linear
    /// interpolation at the cut.
    pub fn partial_area(&self, fpr_max: f64) -> f64 {
        let mut area = 0.0;
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x0 >= fpr_max {
                break;
            }
            if x1 <= fpr_max {
                area += (x1 - x0) * (y0 + y1) * 0.5;
            } else {
                let y = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0);
                area += (fpr_max - x0) * (y0 + y) * 0.5;
                break;
            }
        }
        area
    }

    pub fn auc(&self) -> f64 {
        self.partial_area(1.0)
    }
}

/// McClish-standardized partial AUC over fpr in [0, fpr_max]: 0.5 for the
/// chance diagonal, 1 for a perfect ranking.
pub fn spauc(curve: &RocCurve, fpr_max: f64) -> Result<f64, MetricsError> {
    if !(fpr_max > 0.0 && fpr_max <= 1.0) {
        return Err(MetricsError::InvalidFprMax(fpr_max));
    }
    let a_min = 0.5 * fpr_max * fpr_max;
    let a_max = fpr_max;
    let p = curve.partial_area(fpr_max);
    Ok(0.5 * (1.0 + (p - a_min) / (a_max - a_min)))
}

pub const DEFAULT_FPR_MAX: f64 = 0.05;

/// Everything the CLI reports for one evaluation. Undefined rates are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub far: f64,
    pub mdr: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub auc: f64,
    pub spauc: f64,
    /// SPAUC of the hard verdicts alone (a two-point ROC).
    pub spauc_verdict: f64,
    pub fpr_max: f64,
}

impl MetricReport {
    /// Builds a report from hard labels plus a ranking score per sample.
    /// AUC and SPAUC are NaN when the truth holds a single class.
    pub fn evaluate(
        predicted: &[Label],
        scores: &[f64],
        truth: &[Label],
        fpr_max: f64,
    ) -> Result<Self, MetricsError> {
        let c = confusion(predicted, truth)?;
        let (precision_macro, recall_macro, f1_macro) = macro_prf(&c);
        let (auc, sp) = match roc(scores, truth) {
            Ok(curve) => (curve.auc(), spauc(&curve, fpr_max)?),
            Err(MetricsError::SingleClass) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        let hard: Vec<f64> = predicted.iter().map(|l| l.index() as f64).collect();
        let sp_verdict = match roc(&hard, truth) {
            Ok(curve) => spauc(&curve, fpr_max)?,
            Err(_) => f64::NAN,
        };
        Ok(Self {
            n: c.total(),
            confusion: c,
            accuracy: accuracy(&c)?,
            far: far(&c).unwrap_or(f64::NAN),
            mdr: mdr(&c).unwrap_or(f64::NAN),
            precision_macro,
            recall_macro,
            f1_macro,
            auc,
            spauc: sp,
            spauc_verdict: sp_verdict,
            fpr_max,
        })
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n", self.n.to_string()),
            ("tp", self.confusion.tp.to_string()),
            ("fp", self.confusion.fp.to_string()),
            ("tn", self.confusion.tn.to_string()),
            ("fn", self.confusion.fn_.to_string()),
            ("accuracy", fmt_f(self.accuracy)),
            ("far", fmt_f(self.far)),
            ("mdr", fmt_f(self.mdr)),
            ("precision_macro", fmt_f(self.precision_macro)),
            ("recall_macro", fmt_f(self.recall_macro)),
            ("f1_macro", fmt_f(self.f1_macro)),
            ("auc", fmt_f(self.auc)),
            ("spauc", fmt_f(self.spauc)),
            ("spauc_verdict", fmt_f(self.spauc_verdict)),
            ("fpr_max", fmt_f(self.fpr_max)),
        ]
    }

    /// One `key = value` line per field.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Header for [`Self::csv_row`], optionally prefixed by a `label` column.
    pub fn csv_header(with_label: bool) -> String {
        let dummy = Self {
            n: 0,
            confusion: ConfusionCounts::default(),
            accuracy: 0.0,
            far: 0.0,
            mdr: 0.0,
            precision_macro: 0.0,
            recall_macro: 0.0,
            f1_macro: 0.0,
            auc: 0.0,
            spauc: 0.0,
            spauc_verdict: 0.0,
            fpr_max: 0.0,
        };
        let cols: Vec<_> = dummy.fields().into_iter().map(|(k, _)| k).collect();
        if with_label {
            format!("label,{}", cols.join(","))
        } else {
            cols.join(",")
        }
    }

    pub fn csv_row(&self, label: Option<&str>) -> String {
        let vals: Vec<_> = self.fields().into_iter().map(|(_, v)| v).collect();
        match label {
            Some(l) => format!("{l},{}", vals.join(",")),
            None => vals.join(","),
        }
    }
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}
