//! Confusion accounting, rates and CSV export.
//!
//! MW is the positive class. Both the standard sensitivity/specificity and
//! precision/NPV are reported; rates whose denominator is zero are `None` and
//! print as `NA`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Add;
use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::Label;
use crate::tensor::Tensor;
use crate::train::TrainHistory;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Mw, Label::Mw) => self.tp += 1,
            (Label::Fs, Label::Fs) => self.tn += 1,
            (Label::Mw, Label::Fs) => self.fp += 1,
            (Label::Fs, Label::Mw) => self.fn_ += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// tp / (tp + fn)
    pub sensitivity: Option<f64>,
    /// tn / (tn + fp)
    pub specificity: Option<f64>,
    /// tp / (tp + fp)
    pub precision: Option<f64>,
    /// tn / (tn + fn)
    pub npv: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        c.record(p, l);
    }
    Ok(c)
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    Ok(Metrics {
        accuracy: c.correct() as f64 / c.total() as f64,
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        precision: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
    })
}

/// Componentwise sum.
pub fn pool_counts(counts: &[ConfusionCounts]) -> Result<ConfusionCounts> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("nothing to pool".into()));
    }
    Ok(counts.iter().fold(ConfusionCounts::default(), |a, &b| a + b))
}

/// `x` with 5 decimals, or `NA`.
pub fn fmt_rate(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.5}"))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accuracy {:.5}  sensitivity {}  specificity {}  precision {}  npv {}",
            self.accuracy,
            fmt_rate(self.sensitivity),
            fmt_rate(self.specificity),
            fmt_rate(self.precision),
            fmt_rate(self.npv)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub counts: ConfusionCounts,
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("writing {}: {other:?}", path.display())),
    }
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub const REPORT_HEADER: [&str; 10] = [
    "experiment",
    "tp",
    "tn",
    "fp",
    "fn",
    "accuracy",
    "sensitivity",
    "specificity",
    "precision",
    "npv",
];

/// One row per experiment: counts and all five rates.
pub fn export_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(REPORT_HEADER).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let m = metrics(&row.counts)?;
        let c = row.counts;
        w.write_record([
            row.experiment.clone(),
            c.tp.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            format!("{:.5}", m.accuracy),
            fmt_rate(m.sensitivity),
            fmt_rate(m.specificity),
            fmt_rate(m.precision),
            fmt_rate(m.npv),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Columns `repetition, epoch, train_loss, train_acc, val_acc`; epochs are 1-based.
pub fn export_history(histories: &[TrainHistory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(["repetition", "epoch", "train_loss", "train_acc", "val_acc"])
        .map_err(|e| csv_err(path, e))?;
    for (rep, h) in histories.iter().enumerate() {
        for (e, rec) in h.epochs.iter().enumerate() {
            w.write_record([
                rep.to_string(),
                (e + 1).to_string(),
                format!("{:.5}", rec.train_loss),
                format!("{:.5}", rec.train_acc),
                format!("{:.5}", rec.val_acc),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    finish(path, w)
}

/// Channels x time: a header `channel,0,1,..`, then one row per channel starting
/// with its label. Values use the shortest text that parses back to the same f32.
pub fn dump_window_csv(window: &Tensor<f32>, channel_labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    window.expect_rank("dump_window_csv", 2)?;
    let (c, t) = (window.shape()[0], window.shape()[1]);
    if channel_labels.len() != c {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a {c}-channel window",
            channel_labels.len()
        )));
    }
    let mut w = create(path)?;
    let header = std::iter::once("channel".to_string()).chain((0..t).map(|i| i.to_string()));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (label, row) in channel_labels.iter().zip(window.data().chunks_exact(t)) {
        let rec = std::iter::once(label.clone()).chain(row.iter().map(|v| v.to_string()));
        w.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Inverse of [`dump_window_csv`]: the window and its channel labels.
pub fn read_window_csv(path: impl AsRef<Path>) -> Result<(Tensor<f32>, Vec<String>)> {
    const FORMAT: &str = "window csv";
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::parse(FORMAT, "header", e.to_string()))?,
        None => return Err(Error::parse(FORMAT, "header", "file is empty")),
    };
    let t = header.len().saturating_sub(1);
    let expected = (0..t).map(|i| i.to_string());
    if header.get(0) != Some("channel") || !header.iter().skip(1).eq(expected) || t == 0 {
        return Err(Error::parse(FORMAT, "header", "expected `channel,0,1,..`"));
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = format!("row {}", i + 2);
        let rec = rec.map_err(|e| Error::parse(FORMAT, row.as_str(), e.to_string()))?;
        if rec.len() != t + 1 {
            return Err(Error::parse(FORMAT, row, format!("{} fields, expected {}", rec.len(), t + 1)));
        }
        labels.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            let x: f32 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(FORMAT, row.as_str(), format!("not a number: {v:?}")))?;
            data.push(x);
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(FORMAT, "rows", "no channel rows"));
    }
    Ok((Tensor::new(vec![labels.len(), t], data)?, labels))
}
