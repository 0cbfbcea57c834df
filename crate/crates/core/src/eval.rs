//! Confusion matrix, accuracy and macro-averaged precision, recall and F1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::arg("confusion matrix must be square"));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..][..self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.n.max(1)).take(self.n)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.row(c).iter().sum()
    }

    /// Samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, c)).sum()
    }
}

pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::arg(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::arg(format!(
                "label pair ({t}, {p}) out of range for {n_classes} classes"
            )));
        }
        cm.counts[t * n_classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub support: u64,
    pub predicted: u64,
    /// Some score had a zero denominator and was set to 0.
    pub undefined: bool,
    /// Counted in the macro averages; false when the class neither
    /// occurs nor is ever predicted.
    pub in_macro: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub samples: u64,
}

impl MetricsReport {
    /// Classes with a zero-denominator score.
    pub fn flagged(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, m)| m.undefined)
            .map(|(i, _)| i)
            .collect()
    }

    /// Pooled TP / (TP + FP); equals accuracy for single-label data.
    pub fn micro_precision(&self) -> f64 {
        let tp: u64 = self.per_class.iter().map(|m| m.true_positives).sum();
        let predicted: u64 = self.per_class.iter().map(|m| m.predicted).sum();
        tp as f64 / predicted as f64
    }

    pub fn to_json(&self, class_names: &[String]) -> Result<String> {
        #[derive(Serialize)]
        struct Named<'a> {
            class: &'a str,
            #[serde(flatten)]
            metrics: &'a ClassMetrics,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            accuracy: f64,
            macro_precision: f64,
            macro_recall: f64,
            macro_f1: f64,
            samples: u64,
            per_class: Vec<Named<'a>>,
        }
        check_names(class_names, self.per_class.len())?;
        let out = Out {
            accuracy: self.accuracy,
            macro_precision: self.macro_precision,
            macro_recall: self.macro_recall,
            macro_f1: self.macro_f1,
            samples: self.samples,
            per_class: class_names
                .iter()
                .zip(&self.per_class)
                .map(|(class, metrics)| Named { class, metrics })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }

    /// Human-readable summary with per-class rows.
    pub fn to_table(&self, class_names: &[String]) -> Result<String> {
        check_names(class_names, self.per_class.len())?;
        let w = class_names
            .iter()
            .map(|n| n.chars().count())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        s += &format!("Accuracy   {}\n", format_percent(self.accuracy));
        s += &format!("Precision  {}\n", format_percent(self.macro_precision));
        s += &format!("Recall     {}\n", format_percent(self.macro_recall));
        s += &format!("F1 Score   {}\n", format_percent(self.macro_f1));
        s += &format!("Samples    {}\n\n", self.samples);
        s += &format!(
            "{:<w$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "Class", "Precision", "Recall", "F1", "Support"
        );
        let mut absent = 0;
        for (name, m) in class_names.iter().zip(&self.per_class) {
            if !m.in_macro {
                absent += 1;
                continue;
            }
            let pad = w - name.chars().count();
            s += &format!(
                "{name}{:pad$}  {:>9}  {:>9}  {:>9}  {:>7}{}\n",
                "",
                format_percent(m.precision),
                format_percent(m.recall),
                format_percent(m.f1),
                m.support,
                if m.undefined { "  *" } else { "" }
            );
        }
        if self.per_class.iter().any(|m| m.undefined && m.in_macro) {
            s += "* a score had a zero denominator and counts as 0\n";
        }
        if absent > 0 {
            s += &format!("{absent} classes neither occur nor are predicted and are not listed\n");
        }
        Ok(s)
    }
}

fn check_names(names: &[String], n: usize) -> Result<()> {
    if names.len() != n {
        return Err(Error::arg(format!(
            "{} class names for {n} classes",
            names.len()
        )));
    }
    Ok(())
}

/// `0.98174` becomes `"98.17 %"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2} %", fraction * 100.0)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, per-class scores and their unweighted means. Scores with a
/// zero denominator count as 0 and mark the class as undefined. Classes
/// absent from both truth and predictions are left out of the means.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::arg("confusion matrix is empty"));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.n)
        .map(|c| {
            let tp = cm.get(c, c);
            let support = cm.support(c);
            let predicted = cm.predicted(c);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
            ClassMetrics {
                precision: precision.unwrap_or(0.0),
                recall: recall.unwrap_or(0.0),
                f1: f1.unwrap_or(0.0),
                true_positives: tp,
                support,
                predicted,
                undefined: precision.is_none() || recall.is_none(),
                in_macro: support > 0 || predicted > 0,
            }
        })
        .collect();
    let counted: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.in_macro).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        counted.iter().map(|m| f(m)).sum::<f64>() / counted.len() as f64
    };
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        samples: total,
        per_class,
    })
}

pub fn write_confusion_csv<W: std::io::Write>(
    cm: &ConfusionMatrix,
    class_names: &[String],
    out: W,
) -> Result<()> {
    check_names(class_names, cm.n)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(class_names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in class_names.iter().zip(cm.rows()) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(u64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Square grid with class names labelling both the header row and the
/// first column.
pub fn export_confusion_csv(
    cm: &ConfusionMatrix,
    class_names: &[String],
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_confusion_csv(cm, class_names, file)
}

pub fn read_confusion_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, ConfusionMatrix)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let names: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::with_capacity(names.len());
    for (i, record) in r.records().enumerate() {
        let record = record?;
        if record.get(0) != names.get(i).map(String::as_str) {
            return Err(Error::arg(format!(
                "row {i} is labelled {:?}, expected {:?}",
                record.get(0),
                names.get(i)
            )));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|e| Error::arg(format!("row {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != names.len() {
        return Err(Error::arg(format!(
            "{} rows for {} columns",
            rows.len(),
            names.len()
        )));
    }
    Ok((names, ConfusionMatrix::from_rows(rows)?))
}

pub fn parse_confusion_csv(path: &Path) -> Result<(Vec<String>, ConfusionMatrix)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_confusion_csv(file)
}
