//! Aggregation of batch result CSVs and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{SimulationResult, CSV_HEADER};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no successful result rows")]
    EmptyInput,
    #[error("unexpected CSV header `{found}`")]
    HeaderMismatch { found: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Parses a batch results CSV, rejecting files whose header differs.
pub fn parse_results<R: std::io::Read>(reader: R) -> Result<Vec<SimulationResult>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let found = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if found != CSV_HEADER {
        return Err(AnalysisError::HeaderMismatch { found });
    }
    rdr.deserialize().map(|r| r.map_err(AnalysisError::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl Stat {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let (lo, hi) = (v[0], v[v.len() - 1]);
        let mean = (v.iter().sum::<f64>() / n).clamp(lo, hi);
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let sd = (sq.iter().sum::<f64>() / n).sqrt();
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub initial_placement: String,
    pub reallocation: String,
    pub placement: String,
    pub estimator: String,
    pub n: usize,
    pub active_servers: Stat,
    pub cpu_util_pct: Stat,
    pub sla_violation_rate: Stat,
    pub total_migrations: u64,
}

impl AggregateRow {
    pub fn key(&self) -> String {
        format!("{}/{}/{}/{}", self.initial_placement, self.reallocation, self.placement, self.estimator)
    }
}

/// Groups successful rows by controller and estimator, ranked by mean
/// active servers (ties by key).
pub fn aggregate(rows: &[SimulationResult]) -> Result<Vec<AggregateRow>, AnalysisError> {
    let mut groups: BTreeMap<(String, String, String, String), Vec<&SimulationResult>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let key = (
            r.initial_placement.clone(),
            r.reallocation.clone(),
            r.placement.clone(),
            r.estimator.to_string(),
        );
        groups.entry(key).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut out: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((initial_placement, reallocation, placement, estimator), members)| {
            let col = |f: fn(&SimulationResult) -> f64| Stat::of(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                initial_placement,
                reallocation,
                placement,
                estimator,
                n: members.len(),
                active_servers: col(|r| r.avg_active_servers),
                cpu_util_pct: col(|r| r.avg_cpu_util_pct),
                sla_violation_rate: col(|r| r.sla_violation_rate),
                total_migrations: members.iter().map(|r| r.migration_count).sum(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.active_servers
            .mean
            .total_cmp(&b.active_servers.mean)
            .then_with(|| a.key().cmp(&b.key()))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Html,
}

impl ReportFormat {
    /// `.html`/`.htm` selects HTML, anything else Markdown.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("html") | Some("htm") => ReportFormat::Html,
            _ => ReportFormat::Markdown,
        }
    }
}

const COLUMNS: [&str; 12] = [
    "initial_placement",
    "reallocation",
    "placement",
    "estimator",
    "n",
    "mean_active_servers",
    "sd_active_servers",
    "mean_cpu_util_pct",
    "sd_cpu_util_pct",
    "mean_sla_violation_rate",
    "sd_sla_violation_rate",
    "total_migrations",
];

fn cells(r: &AggregateRow) -> [String; 12] {
    [
        r.initial_placement.clone(),
        r.reallocation.clone(),
        r.placement.clone(),
        r.estimator.clone(),
        r.n.to_string(),
        format!("{:.4}", r.active_servers.mean),
        format!("{:.4}", r.active_servers.sd),
        format!("{:.4}", r.cpu_util_pct.mean),
        format!("{:.4}", r.cpu_util_pct.sd),
        format!("{:.4}", r.sla_violation_rate.mean),
        format!("{:.4}", r.sla_violation_rate.sd),
        r.total_migrations.to_string(),
    ]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bars of mean active servers per group.
pub fn render_svg(rows: &[AggregateRow]) -> String {
    const BAR_H: usize = 20;
    const LABEL_W: usize = 320;
    const PLOT_W: f64 = 400.0;
    let max = rows.iter().map(|r| r.active_servers.mean).fold(0.0, f64::max);
    let height = rows.len() * BAR_H + 10;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        LABEL_W + PLOT_W as usize + 80
    );
    for (i, r) in rows.iter().enumerate() {
        let y = 5 + i * BAR_H;
        let w = if max > 0.0 { r.active_servers.mean / max * PLOT_W } else { 0.0 };
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\
             <rect x=\"{LABEL_W}\" y=\"{y}\" width=\"{w:.2}\" height=\"{}\" fill=\"#4a78b0\"/>\
             <text x=\"{:.2}\" y=\"{}\">{:.3}</text>",
            LABEL_W - 6,
            y + 14,
            escape(&r.key()),
            BAR_H - 4,
            LABEL_W as f64 + w + 4.0,
            y + 14,
            r.active_servers.mean
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders the aggregate table, optionally with an inline SVG chart.
pub fn render_report(rows: &[AggregateRow], format: ReportFormat, plot: bool) -> String {
    let mut doc = String::new();
    match format {
        ReportFormat::Markdown => {
            doc.push_str("# Simulation results\n\n");
            let _ = writeln!(doc, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(doc, "|{}", "---|".repeat(COLUMNS.len()));
            for r in rows {
                let _ = writeln!(doc, "| {} |", cells(r).join(" | "));
            }
            if plot {
                doc.push_str("\n## Mean active servers\n\n");
                doc.push_str(&render_svg(rows));
            }
        }
        ReportFormat::Html => {
            doc.push_str("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>Simulation results</title>\n");
            doc.push_str("<style>table{border-collapse:collapse}td,th{border:1px solid #999;padding:2px 6px}</style>\n");
            doc.push_str("</head>\n<body>\n<h1>Simulation results</h1>\n<table>\n<tr>");
            for c in COLUMNS {
                let _ = write!(doc, "<th>{c}</th>");
            }
            doc.push_str("</tr>\n");
            for r in rows {
                doc.push_str("<tr>");
                for c in cells(r) {
                    let _ = write!(doc, "<td>{}</td>", escape(&c));
                }
                doc.push_str("</tr>\n");
            }
            doc.push_str("</table>\n");
            if plot {
                doc.push_str("<h2>Mean active servers</h2>\n");
                doc.push_str(&render_svg(rows));
            }
            doc.push_str("</body>\n</html>\n");
        }
    }
    doc
}
