use super::metrics::{MetricsRecord, METRIC_ROWS};

/// Marker appended to the best value of each row.
pub const BEST_MARKER: char = '*';
/// Rendering of an undefined (0/0) metric.
pub const UNDEFINED: &str = "—";

fn best_flags(values: &[Option<f64>]) -> Vec<bool> {
    let best = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| *v == Some(best)).collect()
}

fn row(label: &str, cells: &[String], widths: &[usize], label_width: usize) -> String {
    let mut line = format!("{label:<label_width$}");
    for (cell, w) in cells.iter().zip(widths) {
        line.push_str("  ");
        let pad = w.saturating_sub(cell.chars().count());
        line.extend(std::iter::repeat_n(' ', pad));
        line.push_str(cell);
    }
    line.trim_end().to_string()
}

/// Plain-text table with metrics as rows and one column per record.
/// Percentages use two decimals, AUPRC three; the highest value in each row is
/// followed by `*` (every tied maximum is marked), undefined values print as
/// `—`. The AUPRC row appears only when some record carries one.
pub fn render_report(records: &[(String, MetricsRecord)]) -> String {
    let mut rows: Vec<(&str, Vec<Option<f64>>, usize)> = METRIC_ROWS
        .iter()
        .map(|(label, get)| (*label, records.iter().map(|(_, m)| get(m)).collect(), 2))
        .collect();
    if records.iter().any(|(_, m)| m.auprc.is_some()) {
        rows.push(("AUPRC", records.iter().map(|(_, m)| m.auprc).collect(), 3));
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, values, decimals)| {
            values
                .iter()
                .zip(best_flags(values))
                .map(|(v, best)| match v {
                    Some(x) => format!("{x:.decimals$}{}", if best { BEST_MARKER } else { ' ' }),
                    None => format!("{UNDEFINED} "),
                })
                .collect()
        })
        .collect();
    let label_width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Metric".len());
    let widths: Vec<usize> = (0..records.len())
        .map(|c| {
            let name = records[c].0.chars().count();
            cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0).max(name)
        })
        .collect();

    let names: Vec<String> = records.iter().map(|(n, _)| n.clone()).collect();
    let mut out = row("Metric", &names, &widths, label_width);
    out.push('\n');
    for ((label, _, _), line) in rows.iter().zip(&cells) {
        out.push_str(&row(label, line, &widths, label_width));
        out.push('\n');
    }
    out.push_str(&format!("\n{BEST_MARKER} best value in the row; {UNDEFINED} undefined (0/0)\n"));
    out
}
