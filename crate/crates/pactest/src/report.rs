//! Report rendering: reproducibility headers, per-iteration CSV, and the
//! fixed-width study tables the simulation harness prints.
//!
//! Every emitted file embeds the resolved configuration as `# key=value`
//! comment lines and contains nothing run-dependent beyond the seeded
//! results, so identical configurations produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::engine::{Decision, TestReport, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Renders `key=value` pairs as CSV comment lines.
pub fn provenance_comments(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "# {k}={v}").expect("string write");
    }
    out
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn verdict_short(v: &Verdict) -> String {
    match v {
        Verdict::Rejected { iteration } => format!("reject@{iteration}"),
        Verdict::NotRejectedBudget => "not-rejected".into(),
        Verdict::NotRejectedDataExhausted => "data-exhausted".into(),
    }
}

/// Serializes one test report: a provenance header followed by one CSV row
/// per iteration.  Floats use the shortest round-trip representation.
pub fn report_to_csv(report: &TestReport) -> String {
    let mut out = String::new();
    let mut header: Vec<(String, String)> = vec![
        ("subject".into(), report.subject.clone()),
        ("requested_kind".into(), report.requested_kind.to_string()),
        ("kind".into(), report.kind.to_string()),
        ("goods".into(), report.goods.to_string()),
        ("lipschitz".into(), report.lipschitz.to_string()),
        ("config_digest".into(), report.config_digest.clone()),
    ];
    if let Some(note) = &report.fallback {
        header.push(("fallback".into(), note.clone()));
    }
    header.extend(report.config.iter().cloned());
    header.push(("verdict".into(), report.verdict.to_string()));
    for w in &report.warnings {
        header.push(("warning".into(), w.clone()));
    }
    out.push_str(&provenance_comments(&header));
    out.push_str("iteration,eps,delta,n_required,points_used,points_skipped,norm,t_n,decision\n");
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.iteration,
            row.eps,
            row.delta,
            row.n_required,
            row.points_used,
            row.points_skipped,
            opt_field(row.norm),
            opt_field(row.statistic),
            row.decision,
        )
        .expect("string write");
    }
    out
}

pub fn write_string(path: impl AsRef<Path>, content: &str) -> Result<(), ReportError> {
    let path = path.as_ref();
    std::fs::write(path, content).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_report_csv(report: &TestReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    write_string(path, &report_to_csv(report))
}

/// One study column: a deviation label and the test it produced.
#[derive(Debug, Clone)]
pub struct StudyCell {
    pub label: String,
    pub report: TestReport,
}

fn fmt_stat(v: Option<f64>) -> String {
    match v {
        Some(x) if x == 0.0 => "0".into(),
        Some(x) if (1e-3..1e4).contains(&x.abs()) => format!("{x:.4}"),
        Some(x) => format!("{x:.3e}"),
        None => "-".into(),
    }
}

/// Fixed-width study table: one column per deviation, one row block per
/// iteration visited by any column, rows `eps, delta, n, T_n, decision`,
/// then a verdict line.  Columns that stopped earlier print `-`.
pub fn study_table_text(
    title: &str,
    param_name: &str,
    cells: &[StudyCell],
    footnotes: &[String],
) -> String {
    let max_iter = cells
        .iter()
        .map(|c| c.report.rows.len())
        .max()
        .unwrap_or(0);
    // Row label column plus one column per cell.
    let mut columns: Vec<Vec<String>> = Vec::new();
    let mut labels: Vec<String> = vec![param_name.to_string()];
    for k in 1..=max_iter {
        labels.push(format!("eps_{k}"));
        labels.push(format!("delta_{k}"));
        labels.push(format!("n_{k}"));
        labels.push(format!("T_n_{k}"));
        labels.push(format!("decision_{k}"));
    }
    labels.push("verdict".into());
    columns.push(labels);
    for cell in cells {
        let mut col = vec![cell.label.clone()];
        for k in 1..=max_iter {
            match cell.report.rows.get(k - 1) {
                Some(row) => {
                    col.push(fmt_stat(Some(row.eps)));
                    col.push(fmt_stat(Some(row.delta)));
                    col.push(if row.decision == Decision::DataExhausted {
                        format!("{} (have {})", row.n_required, row.points_used)
                    } else {
                        row.n_required.to_string()
                    });
                    col.push(fmt_stat(row.statistic));
                    col.push(row.decision.to_string());
                }
                None => col.extend(std::iter::repeat_n("-".to_string(), 5)),
            }
        }
        col.push(verdict_short(&cell.report.verdict));
        columns.push(col);
    }
    let widths: Vec<usize> = columns
        .iter()
        .map(|col| col.iter().map(String::len).max().unwrap_or(1) + 2)
        .collect();
    let mut out = String::new();
    writeln!(out, "{title}").expect("string write");
    let rows = columns[0].len();
    for r in 0..rows {
        let mut line = String::new();
        for (col, width) in columns.iter().zip(&widths) {
            write!(line, "{:<width$}", col[r], width = width).expect("string write");
        }
        writeln!(out, "{}", line.trim_end()).expect("string write");
    }
    for note in footnotes {
        writeln!(out, "note: {note}").expect("string write");
    }
    out
}

/// Long-format CSV over all study cells: provenance header, then one row
/// per (deviation, iteration).
pub fn study_csv(header: &[(String, String)], cells: &[StudyCell]) -> String {
    let mut out = provenance_comments(header);
    out.push_str(
        "deviation,seed,iteration,eps,delta,n_required,points_used,points_skipped,norm,t_n,decision,verdict\n",
    );
    for cell in cells {
        for row in &cell.report.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                cell.label,
                cell.report.seed,
                row.iteration,
                row.eps,
                row.delta,
                row.n_required,
                row.points_used,
                row.points_skipped,
                opt_field(row.norm),
                opt_field(row.statistic),
                row.decision,
                verdict_short(&cell.report.verdict),
            )
            .expect("string write");
        }
    }
    out
}
