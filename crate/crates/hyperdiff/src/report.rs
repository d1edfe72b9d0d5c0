//! Evaluation report serialization and the quantitative text table
//! (per-class rows, then OA / AA / kappa x 100).

use std::path::Path;

use hyperdiff_core::metrics::EvalReport;

use crate::container::{write_json, ClassTable};
use crate::error::Result;

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    write_json(path, report)
}

pub fn format_report_table(report: &EvalReport, classes: Option<&ClassTable>) -> String {
    let mut out = String::new();
    let name_of = |id: usize| -> String {
        classes
            .and_then(|t| t.get(&(id as u16)))
            .map(|e| e.name().to_string())
            .unwrap_or_else(|| format!("Class {id}"))
    };
    let width = (1..=report.classes)
        .map(|i| name_of(i).len())
        .max()
        .unwrap_or(8)
        .max(8);
    out.push_str(&format!("{:>4}  {:<width$}  {:>9}\n", "No.", "Class", "Acc(%)"));
    for i in 1..=report.classes {
        match report.per_class_accuracy[i - 1] {
            Some(acc) => out.push_str(&format!(
                "{:>4}  {:<width$}  {:>9.2}\n",
                i,
                name_of(i),
                acc * 100.0
            )),
            None => out.push_str(&format!("{:>4}  {:<width$}  {:>9}\n", i, name_of(i), "n/a")),
        }
    }
    out.push_str(&format!("{:->width$}\n", "-", width = width + 17));
    out.push_str(&format!("{:<w$}  {:>9.2}\n", "OA(%)", report.oa * 100.0, w = width + 6));
    out.push_str(&format!("{:<w$}  {:>9.2}\n", "AA(%)", report.aa * 100.0, w = width + 6));
    out.push_str(&format!(
        "{:<w$}  {:>9.2}\n",
        "kappa*100",
        report.kappa * 100.0,
        w = width + 6
    ));
    if !report.empty_classes.is_empty() {
        out.push_str(&format!(
            "note: classes {:?} had no test samples and are excluded from AA\n",
            report.empty_classes
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyperdiff_core::metrics::report_from_confusion;

    #[test]
    fn table_lists_classes_then_summary() {
        let r = report_from_confusion(vec![2, 0, 1, 1], 2);
        let table = format_report_table(&r, None);
        assert!(table.contains("Class 1"));
        assert!(table.contains("OA(%)"));
        assert!(table.contains("75.00"));
        assert!(table.contains("kappa*100"));
        assert!(table.contains("50.00"));
    }
}
