//! CSV and Markdown rendering. Numbers use six decimals with a `.` separator.

use std::io;

use super::{AggregateReport, AggregateReportRow, CasesHistogram, IterationCurvePoint, NestedReport};

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn row_fields(r: &AggregateReportRow) -> [String; 3] {
    [r.group.clone(), r.n_occasions.to_string(), fmt6(r.mean_similarity)]
}

pub fn write_report_csv<W: io::Write>(report: &AggregateReport, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "n_occasions", "mean_similarity"]).map_err(csv_err)?;
    for r in report.rows.iter().chain(std::iter::once(&report.total)) {
        out.write_record(row_fields(r)).map_err(csv_err)?;
    }
    out.flush()
}

pub fn write_nested_csv<W: io::Write>(report: &NestedReport, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["section", "group", "n_occasions", "mean_similarity"]).map_err(csv_err)?;
    for (section, inner) in &report.sections {
        for r in inner.rows.iter().chain(std::iter::once(&inner.total)) {
            let [g, n, m] = row_fields(r);
            out.write_record([section.as_str(), &g, &n, &m]).map_err(csv_err)?;
        }
    }
    let [g, n, m] = row_fields(&report.total);
    out.write_record(["", &g, &n, &m]).map_err(csv_err)?;
    out.flush()
}

pub fn write_curve_csv<W: io::Write>(curve: &[IterationCurvePoint], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "mean_similarity", "mean_diff_from_unity", "n"]).map_err(csv_err)?;
    for p in curve {
        out.write_record([
            p.iteration_index.to_string(),
            fmt6(p.mean_similarity),
            fmt6(p.mean_diff_from_unity),
            p.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()
}

pub fn write_cases_csv<W: io::Write>(hist: &CasesHistogram, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "n_occasions"]).map_err(csv_err)?;
    for (k, n) in &hist.counts {
        out.write_record([k.to_string(), n.to_string()]).map_err(csv_err)?;
    }
    out.write_record(["no_consensus_sessions".to_owned(), hist.no_consensus_sessions.to_string()])
        .map_err(csv_err)?;
    out.flush()
}

pub fn report_markdown(title: &str, group_header: &str, report: &AggregateReport) -> String {
    let mut s = format!("### {title}\n\n| {group_header} | No of Occasions | Average Cosine Similarity |\n|---|---:|---:|\n");
    for r in report.rows.iter().chain(std::iter::once(&report.total)) {
        s.push_str(&format!("| {} | {} | {} |\n", r.group, r.n_occasions, fmt6(r.mean_similarity)));
    }
    s
}

pub fn nested_markdown(title: &str, section_header: &str, group_header: &str, report: &NestedReport) -> String {
    let mut s = format!(
        "### {title}\n\n| {section_header} | {group_header} | No of Occasions | Average Cosine Similarity |\n|---|---|---:|---:|\n"
    );
    for (section, inner) in &report.sections {
        for (i, r) in inner.rows.iter().chain(std::iter::once(&inner.total)).enumerate() {
            let label = if i == 0 { section.as_str() } else { "" };
            s.push_str(&format!("| {label} | {} | {} | {} |\n", r.group, r.n_occasions, fmt6(r.mean_similarity)));
        }
    }
    let t = &report.total;
    s.push_str(&format!("| {} | | {} | {} |\n", t.group, t.n_occasions, fmt6(t.mean_similarity)));
    s
}
