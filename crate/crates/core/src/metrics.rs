//! Multiclass evaluation from a confusion matrix.
//!
//! Accuracy is `trace / total`. Per-class precision and recall are the usual
//! one-vs-rest quantities; weighted recall (support-weighted) always equals
//! accuracy, and macro recall is the unweighted mean. MAE, MSE and RMSE treat
//! the classes as ordinal codes (1..k unless given), so confusing distant
//! classes costs more than confusing neighbours.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SectorLabel;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label sequences differ in length ({truth} vs {predicted})")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("confusion matrix rows must have {k} entries")]
    Shape { k: usize },
    #[error("expected {k} class codes, got {got}")]
    CodeCount { k: usize, got: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `counts[t][p]` is the number of items of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        Self {
            k,
            counts: vec![vec![0; k]; k],
            class_names,
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>, class_names: Option<Vec<String>>) -> Result<Self, MetricsError> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(MetricsError::Shape { k });
        }
        let class_names =
            class_names.unwrap_or_else(|| (1..=k).map(|i| format!("class {i}")).collect());
        if class_names.len() != k {
            return Err(MetricsError::Shape { k });
        }
        Ok(Self {
            k,
            counts: rows,
            class_names,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    /// Row sum: items whose true class is `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Column sum: items predicted as `i`.
    pub fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|r| r[i]).sum()
    }

    pub fn false_positives(&self, i: usize) -> u64 {
        self.predicted(i) - self.true_positives(i)
    }

    pub fn false_negatives(&self, i: usize) -> u64 {
        self.support(i) - self.true_positives(i)
    }

    pub fn true_negatives(&self, i: usize) -> u64 {
        self.total() - self.support(i) - self.false_positives(i)
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros((1..=k).map(|i| format!("class {i}")).collect());
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= k {
                return Err(MetricsError::LabelOutOfRange { label, k });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub true_positives: u64,
    pub predicted: u64,
    pub precision: f64,
    /// False when the class was never predicted; `precision` is then 0.
    pub precision_defined: bool,
    pub recall: f64,
    /// False when the class has no true items; `recall` is then 0.
    pub recall_defined: bool,
    /// One-vs-rest `(TP + TN) / total`.
    pub one_vs_rest_accuracy: f64,
}

/// A computed metric disagreeing with a reference figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub metric: String,
    pub reference: f64,
    pub computed: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub total: u64,
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    pub weighted_recall: f64,
    pub macro_recall: f64,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub class_codes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discrepancies: Vec<Discrepancy>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

pub fn evaluate(cm: &ConfusionMatrix, class_codes: Option<&[f64]>) -> Result<MetricReport, MetricsError> {
    let total = cm.total();
    if total == 0 || cm.k == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let codes: Vec<f64> = match class_codes {
        Some(c) if c.len() != cm.k => {
            return Err(MetricsError::CodeCount { k: cm.k, got: c.len() })
        }
        Some(c) => c.to_vec(),
        None => (1..=cm.k).map(|i| i as f64).collect(),
    };
    let n = total as f64;

    let classes: Vec<ClassMetrics> = (0..cm.k)
        .map(|i| {
            let tp = cm.true_positives(i);
            let (precision, precision_defined) = ratio(tp, cm.predicted(i));
            let (recall, recall_defined) = ratio(tp, cm.support(i));
            ClassMetrics {
                name: cm.class_names[i].clone(),
                support: cm.support(i),
                true_positives: tp,
                predicted: cm.predicted(i),
                precision,
                precision_defined,
                recall,
                recall_defined,
                one_vs_rest_accuracy: (tp + cm.true_negatives(i)) as f64 / n,
            }
        })
        .collect();

    let trace: u64 = (0..cm.k).map(|i| cm.true_positives(i)).sum();
    let accuracy = trace as f64 / n;
    let weighted_recall = classes
        .iter()
        .map(|c| c.recall * c.support as f64)
        .sum::<f64>()
        / n;
    let macro_recall = classes.iter().map(|c| c.recall).sum::<f64>() / cm.k as f64;

    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (t, row) in cm.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            let d = codes[t] - codes[p];
            abs_sum += c as f64 * d.abs();
            sq_sum += c as f64 * d * d;
        }
    }
    let mae = abs_sum / n;
    let mse = sq_sum / n;

    Ok(MetricReport {
        total,
        accuracy,
        classes,
        weighted_recall,
        macro_recall,
        mae,
        mse,
        rmse: mse.sqrt(),
        class_codes: codes,
        discrepancies: Vec::new(),
    })
}

/// Reference figures to check a report against (e.g. values from an earlier report).
/// Per-class entries are keyed by class name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub macro_recall: Option<f64>,
    #[serde(default)]
    pub weighted_recall: Option<f64>,
    #[serde(default)]
    pub mae: Option<f64>,
    #[serde(default)]
    pub mse: Option<f64>,
    #[serde(default)]
    pub rmse: Option<f64>,
    #[serde(default)]
    pub precision: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub recall: std::collections::BTreeMap<String, f64>,
    /// Absolute tolerance; references are usually rounded figures.
    #[serde(default = "ReferenceValues::default_tolerance")]
    pub tolerance: f64,
}

impl Default for ReferenceValues {
    fn default() -> Self {
        Self {
            accuracy: None,
            macro_recall: None,
            weighted_recall: None,
            mae: None,
            mse: None,
            rmse: None,
            precision: Default::default(),
            recall: Default::default(),
            tolerance: Self::default_tolerance(),
        }
    }
}

impl ReferenceValues {
    fn default_tolerance() -> f64 {
        5e-4
    }
}

impl MetricReport {
    /// Records every reference value that the report does not reproduce
    /// within tolerance.
    pub fn check_reference(&mut self, refs: &ReferenceValues) {
        let tol = refs.tolerance;
        let mut out = Vec::new();
        let mut check = |metric: String, reference: f64, computed: f64, detail: String| {
            if (reference - computed).abs() > tol {
                out.push(Discrepancy {
                    metric,
                    reference,
                    computed,
                    detail,
                });
            }
        };
        let scalars = [
            ("accuracy", refs.accuracy, self.accuracy),
            ("macro_recall", refs.macro_recall, self.macro_recall),
            ("weighted_recall", refs.weighted_recall, self.weighted_recall),
            ("mae", refs.mae, self.mae),
            ("mse", refs.mse, self.mse),
            ("rmse", refs.rmse, self.rmse),
        ];
        for (name, reference, computed) in scalars {
            if let Some(r) = reference {
                check(name.to_string(), r, computed, String::new());
            }
        }
        for c in &self.classes {
            if let Some(&r) = refs.precision.get(&c.name) {
                let implied = if r > 0.0 {
                    format!(
                        "; reference implies {} / {:.1} predicted",
                        c.true_positives,
                        c.true_positives as f64 / r
                    )
                } else {
                    String::new()
                };
                check(
                    format!("precision[{}]", c.name),
                    r,
                    c.precision,
                    format!("matrix gives {}/{}{}", c.true_positives, c.predicted, implied),
                );
            }
            if let Some(&r) = refs.recall.get(&c.name) {
                check(
                    format!("recall[{}]", c.name),
                    r,
                    c.recall,
                    format!("matrix gives {}/{}", c.true_positives, c.support),
                );
            }
        }
        self.discrepancies = out;
    }

    /// Plain-text rendering, one bullet per class then the summary figures.
    pub fn render_text(&self) -> String {
        let pct = |v: f64| format!("{:.2}%", v * 100.0);
        let mut s = String::new();
        for c in &self.classes {
            let precision = if c.precision_defined {
                pct(c.precision)
            } else {
                "undefined (never predicted)".to_string()
            };
            let _ = writeln!(
                s,
                "- {} was correctly classified in {} out of {} cases (recall {}, precision {})",
                c.name,
                c.true_positives,
                c.support,
                pct(c.recall),
                precision
            );
        }
        let _ = writeln!(s, "- Overall accuracy: {} ({} items)", pct(self.accuracy), self.total);
        let _ = writeln!(s, "- Macro recall: {}", pct(self.macro_recall));
        let _ = writeln!(s, "- Weighted recall: {}", pct(self.weighted_recall));
        let _ = writeln!(
            s,
            "- MAE {:.3}, MSE {:.3}, RMSE {:.3}",
            self.mae, self.mse, self.rmse
        );
        if !self.discrepancies.is_empty() {
            let _ = writeln!(s, "Discrepancies against reference values:");
            for d in &self.discrepancies {
                let _ = writeln!(
                    s,
                    "- {}: reference {:.4}, computed {:.4} {}",
                    d.metric, d.reference, d.computed, d.detail
                );
            }
        }
        s
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case: String,
    #[serde(rename = "true")]
    pub truth: String,
    pub pred: String,
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| MetricsError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Builds a confusion matrix from string-labelled predictions.
///
/// When every label is a sector name of one system, classes follow that
/// system's order (so ordinal codes are meaningful); otherwise the sorted
/// set of labels is used.
pub fn confusion_from_records(records: &[PredictionRecord]) -> Result<ConfusionMatrix, MetricsError> {
    let labels: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| [r.truth.as_str(), r.pred.as_str()])
        .collect();
    let sector: Option<Vec<SectorLabel>> = labels.iter().map(|l| l.parse().ok()).collect();
    let names: Vec<String> = match sector {
        Some(parsed) if !parsed.is_empty() && parsed.iter().all(|l| l.space() == parsed[0].space()) => {
            parsed[0].space().labels().iter().map(|l| l.name().to_string()).collect()
        }
        _ => labels.iter().map(|s| s.to_string()).collect(),
    };
    let index = |s: &str| -> usize {
        let canonical = s
            .parse::<SectorLabel>()
            .map(|l| l.name().to_string())
            .unwrap_or_else(|_| s.to_string());
        names
            .iter()
            .position(|n| *n == canonical || n == s)
            .expect("label collected above")
    };
    let mut cm = ConfusionMatrix::zeros(names.clone());
    for r in records {
        cm.counts[index(&r.truth)][index(&r.pred)] += 1;
    }
    Ok(cm)
}
