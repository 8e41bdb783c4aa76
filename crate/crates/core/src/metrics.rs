//! Confusion matrices, per-class IoU / mIoU, and stage-by-stage reports.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::maps::{LabelMap, IGNORE_LABEL};
use crate::{Error, Result};

/// `counts[g][p]`: pixels with ground truth `g` predicted as `p`. Predictions
/// of the ignore label land in a separate per-class void bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    void: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes], void: vec![0; num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    /// Pixels of class `gt` predicted as the ignore label.
    pub fn void_predictions(&self, gt: usize) -> u64 {
        self.void[gt]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.void.iter().sum::<u64>()
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        if pred.num_classes() != self.num_classes || gt.num_classes() != self.num_classes {
            return Err(Error::Shape(format!(
                "class counts differ: matrix {}, prediction {}, ground truth {}",
                self.num_classes,
                pred.num_classes(),
                gt.num_classes()
            )));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE_LABEL {
                continue;
            }
            let g = usize::from(g);
            if p == IGNORE_LABEL {
                self.void[g] += 1;
            } else {
                self.counts[g * self.num_classes + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.void.iter_mut().zip(&other.void) {
            *a += b;
        }
        Ok(())
    }
}

/// Functional form of [`ConfusionMatrix::add`].
pub fn accumulate(pred: &LabelMap, gt: &LabelMap, cm: ConfusionMatrix) -> Result<ConfusionMatrix> {
    let mut cm = cm;
    cm.add(pred, gt)?;
    Ok(cm)
}

/// `(TP, TP + FP + FN)` per class; `None` where the union is empty.
pub fn iou_ratios(cm: &ConfusionMatrix) -> Vec<Option<(u64, u64)>> {
    let c = cm.num_classes;
    (0..c)
        .map(|k| {
            let tp = cm.count(k, k);
            let row: u64 = (0..c).map(|p| cm.count(k, p)).sum::<u64>() + cm.void[k];
            let col: u64 = (0..c).map(|g| cm.count(g, k)).sum();
            let union = row + col - tp;
            (union > 0).then_some((tp, union))
        })
        .collect()
}

/// `TP / (TP + FP + FN)` per class; `None` where the union is empty.
pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    iou_ratios(cm).into_iter().map(|r| r.map(|(tp, union)| tp as f64 / union as f64)).collect()
}

/// How classes with an empty union enter the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentPolicy {
    #[default]
    Exclude,
    /// Score them 0 and keep them in the denominator.
    AsZero,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    miou_with(cm, AbsentPolicy::Exclude)
}

pub fn miou_with(cm: &ConfusionMatrix, policy: AbsentPolicy) -> Result<f64> {
    mean_iou(&iou_per_class(cm), policy)
}

fn mean_iou(ious: &[Option<f64>], policy: AbsentPolicy) -> Result<f64> {
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let denom = match policy {
        AbsentPolicy::Exclude => present.len(),
        AbsentPolicy::AsZero => ious.len(),
    };
    Ok(present.iter().sum::<f64>() / denom as f64)
}

/// One line of a report: a pipeline stage and its scores, as fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub stage: String,
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
}

impl StageRow {
    pub fn from_confusion(stage: impl Into<String>, cm: &ConfusionMatrix, policy: AbsentPolicy) -> Result<Self> {
        let per_class = iou_per_class(cm);
        let miou = mean_iou(&per_class, policy)?;
        Ok(Self { stage: stage.into(), miou, per_class })
    }
}

/// Rows in stage order plus the effective parameters that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub rows: Vec<StageRow>,
    pub params: Vec<(String, String)>,
}

impl EvalReport {
    pub fn new(class_names: Vec<String>) -> Self {
        Self { class_names, ..Self::default() }
    }

    pub fn push_row(&mut self, row: StageRow) -> Result<()> {
        if row.per_class.len() != self.class_names.len() {
            return Err(Error::Shape(format!(
                "row {:?} has {} classes, report has {}",
                row.stage,
                row.per_class.len(),
                self.class_names.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn push_param(&mut self, key: impl Into<String>, value: impl core::fmt::Display) {
        self.params.push((key.into(), format!("{value}")));
    }

    pub fn row(&self, stage: &str) -> Option<&StageRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Renders scores as percentages with two decimals, mIoU first and then the
/// classes in palette order. Markdown output also lists the parameters.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = write!(out, "| Stage | mIOU |");
            for name in &report.class_names {
                let _ = write!(out, " {name} |");
            }
            out.push_str("\n|---|---|");
            for _ in &report.class_names {
                out.push_str("---|");
            }
            out.push('\n');
            for row in &report.rows {
                let _ = write!(out, "| {} | {} |", row.stage, percent(row.miou));
                for v in &row.per_class {
                    match v {
                        Some(v) => {
                            let _ = write!(out, " {} |", percent(*v));
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
            if !report.params.is_empty() {
                out.push_str("\nParameters:\n\n");
                for (k, v) in &report.params {
                    let _ = writeln!(out, "- {k} = {v}");
                }
            }
        }
        ReportFormat::Csv => {
            out.push_str("stage,miou");
            for name in &report.class_names {
                let _ = write!(out, ",{name}");
            }
            out.push('\n');
            for row in &report.rows {
                let _ = write!(out, "{},{}", row.stage, percent(row.miou));
                for v in &row.per_class {
                    out.push(',');
                    if let Some(v) = v {
                        out.push_str(&percent(*v));
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}
