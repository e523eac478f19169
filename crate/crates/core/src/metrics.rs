//! Confusion matrices, per-class DSC/SEN/PPV, overall accuracy and the
//! result tables built from them.
//!
//! A metric whose denominator is zero is undefined and reported as `None`;
//! undefined values are left out of the macro averages instead of counting
//! as zero.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{ClassId, NUM_CLASSES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ground truth has {gt} cells, prediction has {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("label value {0} outside 0..=7")]
    Range(i64),
}

/// Entry `(g, p)` counts cells with truth `g` predicted as `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    pub fn from_classes(gt: &[ClassId], pred: &[ClassId]) -> Result<Self, MetricsError> {
        if gt.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                gt: gt.len(),
                pred: pred.len(),
            });
        }
        let mut cm = Self::default();
        for (g, p) in gt.iter().zip(pred) {
            cm.counts[g.index()][p.index()] += 1;
        }
        Ok(cm)
    }
}

/// Confusion matrix from raw integer labels, validating range.
pub fn confusion(gt: &[i64], pred: &[i64]) -> Result<ConfusionMatrix, MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    let check = |v: i64| {
        if (0..NUM_CLASSES as i64).contains(&v) {
            Ok(v as usize)
        } else {
            Err(MetricsError::Range(v))
        }
    };
    let mut cm = ConfusionMatrix::default();
    for (&g, &p) in gt.iter().zip(pred) {
        cm.counts[check(g)?][check(p)?] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dsc: Option<f64>,
    pub sen: Option<f64>,
    pub ppv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub oa: Option<f64>,
    pub macro_avg: ClassMetrics,
    pub micro_avg: ClassMetrics,
    /// Classes with TP + FP + FN > 0.
    pub included: [bool; NUM_CLASSES],
    pub cells: u64,
    pub inference_ms: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let mut per_class = [ClassMetrics::default(); NUM_CLASSES];
    let mut included = [false; NUM_CLASSES];
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for c in 0..NUM_CLASSES {
        let tp = cm.counts[c][c];
        let fneg = cm.row_sum(c) - tp;
        let fpos = cm.col_sum(c) - tp;
        included[c] = tp + fpos + fneg > 0;
        per_class[c] = ClassMetrics {
            dsc: ratio(2 * tp, 2 * tp + fpos + fneg),
            sen: ratio(tp, tp + fneg),
            ppv: ratio(tp, tp + fpos),
        };
        tp_all += tp;
        fp_all += fpos;
        fn_all += fneg;
    }
    let macro_avg = ClassMetrics {
        dsc: mean(per_class.iter().map(|m| m.dsc)),
        sen: mean(per_class.iter().map(|m| m.sen)),
        ppv: mean(per_class.iter().map(|m| m.ppv)),
    };
    let micro_avg = ClassMetrics {
        dsc: ratio(2 * tp_all, 2 * tp_all + fp_all + fn_all),
        sen: ratio(tp_all, tp_all + fn_all),
        ppv: ratio(tp_all, tp_all + fp_all),
    };
    MetricsReport {
        per_class,
        oa: ratio(cm.trace(), cm.total()),
        macro_avg,
        micro_avg,
        included,
        cells: cm.total(),
        inference_ms: None,
    }
}

/// "16K" for multiples of 1000, the plain count otherwise.
pub fn resolution_label(cells: usize) -> String {
    if cells >= 1000 && cells % 1000 == 0 {
        format!("{}K", cells / 1000)
    } else {
        cells.to_string()
    }
}

/// One evaluated configuration: a model trained at `train_res`, evaluated
/// natively (`eval_res == None`) or after upsampling to `eval_res`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub train_res: usize,
    pub eval_res: Option<usize>,
    pub report: MetricsReport,
}

impl ReportRow {
    pub fn label(&self) -> String {
        match self.eval_res {
            None => resolution_label(self.train_res),
            Some(e) => format!("{} (to {})", resolution_label(self.train_res), resolution_label(e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    /// Row label followed by one value per non-label column.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub const AGGREGATE_COLUMNS: [&str; 6] = ["Input Size", "OA", "DSC", "SEN", "PPV", "Inference Time (ms)"];

/// Aggregate (OA/DSC/SEN/PPV/time) and per-class DSC tables. Rows are sorted
/// by training resolution, native before upsampled, then by eval resolution.
pub fn report_rows(rows: &[ReportRow]) -> (Table, Table) {
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.train_res, r.eval_res.is_some(), r.eval_res));
    let aggregate = Table {
        name: "aggregate".into(),
        columns: AGGREGATE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: sorted
            .iter()
            .map(|r| {
                let m = &r.report;
                (
                    r.label(),
                    vec![m.oa, m.macro_avg.dsc, m.macro_avg.sen, m.macro_avg.ppv, m.inference_ms],
                )
            })
            .collect(),
    };
    let mut per_class_cols = vec!["Resolution".to_string()];
    per_class_cols.extend(ClassId::all().map(|c| c.name().to_string()));
    let per_class = Table {
        name: "per_class_dsc".into(),
        columns: per_class_cols,
        rows: sorted
            .iter()
            .map(|r| (r.label(), r.report.per_class.iter().map(|m| m.dsc).collect()))
            .collect(),
    };
    (aggregate, per_class)
}

impl Table {
    /// Copy without the named value column.
    pub fn without_column(&self, name: &str) -> Table {
        let Some(pos) = self.columns.iter().position(|c| c == name) else {
            return self.clone();
        };
        let mut t = self.clone();
        t.columns.remove(pos);
        for (_, values) in &mut t.rows {
            values.remove(pos - 1);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for (label, values) in &self.rows {
            out.push_str(label);
            for v in values {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n", self.columns.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.columns.len()));
        for (label, values) in &self.rows {
            out.push_str("| ");
            out.push_str(label);
            for v in values {
                match v {
                    Some(v) => {
                        let _ = write!(out, " | {v:.4}");
                    }
                    None => out.push_str(" | -"),
                }
            }
            out.push_str(" |\n");
        }
        out
    }

    /// One JSON object per row, keyed by column name.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (label, values) in &self.rows {
            let mut obj = serde_json::Map::new();
            obj.insert("table".into(), self.name.clone().into());
            obj.insert(self.columns[0].clone(), label.clone().into());
            for (col, v) in self.columns[1..].iter().zip(values) {
                obj.insert(col.clone(), v.map_or(serde_json::Value::Null, Into::into));
            }
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}
