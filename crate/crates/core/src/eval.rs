//! Confusion matrices, per-class precision/recall/F1, overall accuracy, and
//! report serialization.
//!
//! Conventions: rows of the confusion matrix are true classes and columns
//! predicted classes. A class that is never predicted has precision 0; a
//! class with no true samples has recall 0; F1 is 0 when precision and
//! recall are both 0. All percentages are in `[0, 100]`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::GraphSample;
use crate::model::ModelParams;
use crate::train::predict;

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub overall_accuracy: f64,
    pub sample_count: u64,
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Harmonic mean; returns `p` itself when `p == r`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision == recall {
        precision
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(format!(
            "{} true labels for {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::invalid(format!(
                "class pair ({t}, {p}) out of range for {num_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::shape("confusion matrix must be square and non-empty"));
        }
        let sample_count: u64 = confusion.iter().flatten().sum();
        if sample_count == 0 {
            return Err(Error::invalid("confusion matrix holds no samples"));
        }
        let per_class: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
                let actual: u64 = confusion[k].iter().sum();
                let precision = percent(tp, predicted);
                let recall = percent(tp, actual);
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
        let trace: u64 = (0..c).map(|k| confusion[k][k]).sum();
        Ok(Self {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            overall_accuracy: percent(trace, sample_count),
            sample_count,
            per_class,
            confusion,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Stable-key-order TOML with percentages to 2 decimals.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let mut line = |text: String| {
            s.push_str(&text);
            s.push('\n');
        };
        line(format!("sample_count = {}", self.sample_count));
        line(format!("overall_accuracy = {:.2}", self.overall_accuracy));
        line(format!("macro_precision = {:.2}", self.macro_precision));
        line(format!("macro_recall = {:.2}", self.macro_recall));
        line(format!("macro_f1 = {:.2}", self.macro_f1));
        line("confusion = [".into());
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            line(format!("  [{}],", cells.join(", ")));
        }
        line("]".into());
        for (k, m) in self.per_class.iter().enumerate() {
            line(String::new());
            line("[[class]]".into());
            line(format!("index = {k}"));
            line(format!("precision = {:.2}", m.precision));
            line(format!("recall = {:.2}", m.recall));
            line(format!("f1 = {:.2}", m.f1));
        }
        s
    }

    /// Parses [`MetricsReport::to_toml`] output. Metrics are recomputed from
    /// the confusion matrix and must agree with the stored 2-decimal values.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawClass {
            index: usize,
            precision: f64,
            recall: f64,
            f1: f64,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            sample_count: u64,
            overall_accuracy: f64,
            macro_precision: f64,
            macro_recall: f64,
            macro_f1: f64,
            confusion: Vec<Vec<u64>>,
            #[serde(default)]
            class: Vec<RawClass>,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| Error::invalid(format!("report: {e}")))?;
        let report = Self::from_confusion(raw.confusion)?;
        let same = |stored: f64, computed: f64| format!("{stored:.2}") == format!("{computed:.2}");
        let mut consistent = raw.sample_count == report.sample_count
            && same(raw.overall_accuracy, report.overall_accuracy)
            && same(raw.macro_precision, report.macro_precision)
            && same(raw.macro_recall, report.macro_recall)
            && same(raw.macro_f1, report.macro_f1)
            && raw.class.len() == report.num_classes();
        for (k, c) in raw.class.iter().enumerate() {
            let Some(m) = report.per_class.get(k) else { break };
            consistent &= c.index == k && same(c.precision, m.precision) && same(c.recall, m.recall) && same(c.f1, m.f1);
        }
        if !consistent {
            return Err(Error::invalid("report metrics disagree with its confusion matrix"));
        }
        Ok(report)
    }

    /// Row-major confusion matrix as CSV with a header of predicted classes.
    pub fn confusion_csv(&self) -> String {
        let c = self.num_classes();
        let mut s = String::from("true\\predicted");
        for k in 0..c {
            write!(s, ",{k}").expect("writing to a String");
        }
        s.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            write!(s, "{k}").expect("writing to a String");
            for v in row {
                write!(s, ",{v}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }
}

pub fn serialize_report(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_toml()).map_err(|e| Error::io(path, e))
}

pub fn parse_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    MetricsReport::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Argmax predictions of `params` scored against the sample labels.
pub fn evaluate(params: &ModelParams, samples: &[&GraphSample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty sample set"));
    }
    let predicted = predict(params, samples, EVAL_BATCH)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    MetricsReport::from_confusion(confusion_matrix(&truth, &predicted, params.num_classes())?)
}
