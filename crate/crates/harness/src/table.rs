//! Plain-text result tables: one row per (method, shot mode), four
//! metric columns, best value per column marked with `*`.

use crate::store::ResultsRecord;
use medqa_core::metrics::MetricsReport;

const COLUMNS: [&str; 4] = [
    "Accuracy",
    "Macro Precision",
    "Macro Recall",
    "Macro F1-Score",
];

fn metric(report: &MetricsReport, col: usize) -> f64 {
    match col {
        0 => report.accuracy,
        1 => report.macro_precision,
        2 => report.macro_recall,
        _ => report.macro_f1,
    }
}

fn cell(mean: &MetricsReport, std: Option<&MetricsReport>, col: usize, best: bool) -> String {
    let mut text = match std {
        Some(std) => format!("{:.3} ± {:.3}", metric(mean, col), metric(std, col)),
        None => format!("{:.3}", metric(mean, col)),
    };
    if best {
        text.push_str(" *");
    }
    text
}

fn layout(header: &[String], rows: &[Vec<String>]) -> String {
    let ncols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut emit = |cells: &[String]| {
        let line: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    emit(header);
    emit(
        &(0..ncols)
            .map(|i| "-".repeat(widths[i]))
            .collect::<Vec<_>>(),
    );
    for row in rows {
        emit(row);
    }
    out
}

/// Render labeled results as an aligned table. Cells show `mean ± std`
/// when more than one run was aggregated.
pub fn render_table(records: &[(String, ResultsRecord)]) -> String {
    assert!(!records.is_empty(), "at least one results record required");
    let mut header = vec!["Method".to_string()];
    header.extend(COLUMNS.iter().map(|c| c.to_string()));

    // Best value per metric column across rows.
    let best: Vec<f64> = (0..4)
        .map(|col| {
            records
                .iter()
                .map(|(_, r)| metric(&r.mean, col))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|(label, record)| {
            let std = (record.per_run.len() > 1).then_some(&record.std);
            let mut row = vec![label.clone()];
            for (col, top) in best.iter().enumerate() {
                let is_best = records.len() > 1 && (metric(&record.mean, col) - top).abs() < 1e-12;
                row.push(cell(&record.mean, std, col, is_best));
            }
            row
        })
        .collect();

    layout(&header, &rows)
}

/// Two-row ablation table mirroring the with/without case-generation
/// comparison; the second row carries per-column deltas with arrows.
pub fn render_ablation_table(without: &ResultsRecord, with: &ResultsRecord) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(COLUMNS.iter().map(|c| c.to_string()));

    let base_row: Vec<String> = std::iter::once("ours (no case)".to_string())
        .chain((0..4).map(|col| format!("{:.3}", metric(&without.mean, col))))
        .collect();
    let case_row: Vec<String> = std::iter::once("+ Case".to_string())
        .chain((0..4).map(|col| {
            let base = metric(&without.mean, col);
            let val = metric(&with.mean, col);
            let delta = val - base;
            let arrow = if delta > 1e-12 {
                format!("↑ {:.3}", delta)
            } else if delta < -1e-12 {
                format!("↓ {:.3}", -delta)
            } else {
                "= 0.000".to_string()
            };
            format!("{val:.3} ({arrow})")
        }))
        .collect();

    layout(&header, &[base_row, case_row])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{QuestionRecord, ResultsRecord, RESULTS_SCHEMA};
    use medqa_core::metrics::evaluate;

    fn record(preds: &[&str], runs: usize) -> ResultsRecord {
        let golds: Vec<String> = vec!["A".into(), "B".into(), "C".into(), "D".into()];
        let preds: Vec<String> = preds.iter().map(|s| s.to_string()).collect();
        let report = evaluate(&golds, &preds).unwrap();
        ResultsRecord {
            schema: RESULTS_SCHEMA.into(),
            method: "direct".into(),
            shots: 0,
            per_run: vec![report.clone(); runs],
            mean: report.clone(),
            std: evaluate(&golds, &golds)
                .map(|mut r| {
                    r.accuracy = 0.01;
                    r.macro_precision = 0.01;
                    r.macro_recall = 0.01;
                    r.macro_f1 = 0.01;
                    r
                })
                .unwrap(),
            outcomes: vec![QuestionRecord {
                run: 1,
                id: "q".into(),
                gold: "A".into(),
                predicted: preds[0].clone(),
                correct: preds[0] == "A",
                failure: None,
            }],
        }
    }

    #[test]
    fn single_record_renders_headers_and_row() {
        let table = render_table(&[(
            "direct (zero-shot)".into(),
            record(&["A", "B", "C", "D"], 1),
        )]);
        assert!(table.contains("Method"));
        assert!(table.contains("Macro F1-Score"));
        assert!(table.contains("direct (zero-shot)"));
        assert!(table.contains("1.000"));
        assert!(!table.contains('*'), "no best marker with a single row");
        assert!(!table.contains('±'), "no std cell for a single run");
    }

    #[test]
    fn best_row_is_the_argmax() {
        let good = record(&["A", "B", "C", "D"], 1);
        let worse = record(&["A", "B", "C", "A"], 1);
        let table = render_table(&[("worse".into(), worse), ("good".into(), good)]);
        let good_line = table.lines().find(|l| l.starts_with("good")).unwrap();
        let worse_line = table.lines().find(|l| l.starts_with("worse")).unwrap();
        assert!(good_line.contains('*'));
        assert!(!worse_line.contains('*'));
    }

    #[test]
    fn multi_run_cells_show_mean_plus_minus_std() {
        let table = render_table(&[("ours (zero-shot)".into(), record(&["A", "B", "C", "D"], 3))]);
        assert!(table.contains("1.000 ± 0.010"));
    }

    #[test]
    fn ablation_table_marks_positive_delta_with_up_arrow() {
        let without = record(&["A", "B", "C", "A"], 1);
        let with = record(&["A", "B", "C", "D"], 1);
        let table = render_ablation_table(&without, &with);
        assert!(table.contains("+ Case"));
        assert!(table.contains('↑'));
        let equal = render_ablation_table(&with.clone(), &with);
        assert!(equal.contains("= 0.000"));
        assert!(!equal.contains('↑'));
    }
}
