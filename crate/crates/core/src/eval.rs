//! Classification metrics with forged (label 1) as the positive class.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dann::{predict, predict_domain, DannModel};
use crate::data::{Domain, EvalImages};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
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
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    /// Zero when precision and recall are both zero.
    pub f1: f64,
    pub accuracy: f64,
    /// Mean of the per-domain accuracies of the domain head, present when
    /// both domains were evaluated.
    pub domain_accuracy: Option<f64>,
}

pub fn confusion(preds: &[usize], truth: &[usize]) -> Result<ConfusionCounts> {
    if preds.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(Error::Input(format!("labels must be 0 or 1, got {p} and {t}"))),
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(counts: ConfusionCounts) -> Result<MetricsReport> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Input("cannot compute metrics of zero samples".into()));
    }
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        counts,
        precision,
        recall,
        f1,
        accuracy: ratio(counts.tp + counts.tn, total),
        domain_accuracy: None,
    })
}

/// Domain-head accuracy averaged over the two domains, so each domain
/// weighs the same whatever its sample count. `None` unless both occur.
pub fn domain_accuracy(predicted: &[usize], domains: &[Domain]) -> Option<f64> {
    let mut hits = [0usize; 2];
    let mut seen = [0usize; 2];
    for (&p, d) in predicted.iter().zip(domains) {
        let k = d.index();
        seen[k] += 1;
        hits[k] += usize::from(p == k);
    }
    (seen[0] > 0 && seen[1] > 0).then(|| 0.5 * (ratio(hits[0], seen[0]) + ratio(hits[1], seen[1])))
}

/// Class metrics over every entry of `view`, plus domain accuracy when
/// the view holds both domains.
pub fn evaluate(model: &DannModel, view: &EvalImages) -> Result<MetricsReport> {
    let preds = predict(model, &view.images)?;
    let mut report = metrics(confusion(&preds, &view.labels)?)?;
    if view.domains.contains(&Domain::Source) && view.domains.contains(&Domain::Target) {
        report.domain_accuracy = domain_accuracy(&predict_domain(model, &view.images)?, &view.domains);
    }
    Ok(report)
}

/// One row of an experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub epoch: usize,
    pub lambda: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub domain_accuracy: Option<f64>,
}

impl ReportRow {
    pub fn new(run: impl Into<String>, epoch: usize, lambda: f64, report: &MetricsReport) -> Self {
        let c = report.counts;
        Self {
            run: run.into(),
            epoch,
            lambda,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            accuracy: report.accuracy,
            domain_accuracy: report.domain_accuracy,
        }
    }
}

/// CSV text with a header row; a missing domain accuracy is an empty field.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record([
            "run",
            "epoch",
            "lambda",
            "tp",
            "fp",
            "tn",
            "fn",
            "precision",
            "recall",
            "f1",
            "accuracy",
            "domain_accuracy",
        ])
        .expect("in-memory write");
    }
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn write_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(rows_to_csv(rows).as_bytes()).map_err(|e| Error::io(path, e))
}

/// Appends `rows` to the CSV at `path`, writing the header only when the
/// file is new.
pub fn append_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !path.exists() {
        return write_csv(rows, path);
    }
    let file = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let truth = [1, 1, 1, 0, 0];
        let c = confusion(&truth, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 3, fp: 0, tn: 2, fn_: 0 });
        let m = metrics(c).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn flipped_predictions_swap_counts() {
        let truth = [1, 0, 1, 1, 0, 0, 0];
        let preds = [1, 1, 0, 1, 0, 1, 0];
        let flipped: Vec<usize> = preds.iter().map(|p| 1 - p).collect();
        let a = confusion(&preds, &truth).unwrap();
        let b = confusion(&flipped, &truth).unwrap();
        assert_eq!((a.tp, a.tn), (b.fn_, b.fp));
    }

    #[test]
    fn hand_computed_example() {
        let m = metrics(ConfusionCounts { tp: 2, fp: 1, tn: 6, fn_: 1 }).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn degenerate_cases() {
        let m = metrics(ConfusionCounts { tp: 0, fp: 0, tn: 4, fn_: 2 }).unwrap();
        assert_eq!((m.precision, m.f1), (0.0, 0.0));
        assert!(metrics(ConfusionCounts::default()).is_err());
        assert!(confusion(&[0, 1], &[0]).is_err());
        assert!(confusion(&[2], &[0]).is_err());
    }

    #[test]
    fn domain_accuracy_needs_both() {
        assert_eq!(domain_accuracy(&[0, 0], &[Domain::Source, Domain::Source]), None);
        let d = [Domain::Source, Domain::Source, Domain::Source, Domain::Target];
        assert_eq!(domain_accuracy(&[0, 0, 1, 1], &d), Some(0.5 * (2.0 / 3.0 + 1.0)));
    }

    #[test]
    fn csv_layout() {
        let m = metrics(ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 }).unwrap();
        let text = rows_to_csv(&[ReportRow::new("dann-0", 19, 1.0, &m)]);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "run,epoch,lambda,tp,fp,tn,fn,precision,recall,f1,accuracy,domain_accuracy"
        );
        assert_eq!(lines.next().unwrap(), "dann-0,19,1.0,1,0,1,0,1.0,1.0,1.0,1.0,");
    }
}
