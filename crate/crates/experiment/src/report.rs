use std::str::FromStr;

use meshres_core::metrics::{report_rows, ReportRow, Table};

use crate::sweep::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            other => Err(format!("unknown report format '{other}' (csv, md, json-lines)")),
        }
    }
}

/// Aggregate and per-class DSC tables for `records`.
pub fn tables(records: &[RunRecord]) -> (Table, Table) {
    let rows: Vec<ReportRow> = records
        .iter()
        .map(|r| ReportRow {
            train_res: r.train_res,
            eval_res: r.eval_res,
            report: r.report.clone(),
        })
        .collect();
    report_rows(&rows)
}

/// Both tables in one document: aggregate first, then per-class DSC,
/// separated by a blank line (CSV, markdown) or tagged per line (JSON lines).
pub fn emit_report(records: &[RunRecord], format: ReportFormat) -> String {
    let (aggregate, per_class) = tables(records);
    render(&aggregate, &per_class, format)
}

pub fn render(aggregate: &Table, per_class: &Table, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => format!("{}\n{}", aggregate.to_csv(), per_class.to_csv()),
        ReportFormat::Markdown => format!("{}\n{}", aggregate.to_markdown(), per_class.to_markdown()),
        ReportFormat::JsonLines => format!("{}{}", aggregate.to_json_lines(), per_class.to_json_lines()),
    }
}
