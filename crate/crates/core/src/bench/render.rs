//! Table- and chart-shaped views of a [`MetricsReport`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{TableMetric, Variant};
use super::report::{CellSummary, MetricsReport, Summary};
use crate::error::{Error, Result};
use crate::eval::Protocol;

/// `0.01 -> "1%"`, `0.125 -> "12.5%"`.
pub fn fraction_label(fraction: f64) -> String {
    let s = format!("{:.2}", fraction * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

fn protocol_title(p: Protocol) -> &'static str {
    match p {
        Protocol::Knn => "k-NN",
        Protocol::Linear => "Linear probe",
        Protocol::Finetune => "Finetune",
    }
}

fn metric_title(m: TableMetric) -> &'static str {
    match m {
        TableMetric::MacroF1 => "macro F1",
        TableMetric::Accuracy => "top-1 accuracy",
    }
}

fn headline(cell: &CellSummary, metric: TableMetric) -> Option<&Summary> {
    match metric {
        TableMetric::MacroF1 => cell.macro_f1.as_ref(),
        TableMetric::Accuracy => cell.accuracy.as_ref(),
    }
}

/// Rows, columns and protocols that appear in the report, in config order.
struct Layout {
    variants: Vec<Variant>,
    fractions: Vec<f64>,
}

fn layout(report: &MetricsReport, protocol: Protocol) -> Layout {
    let cells: Vec<&CellSummary> = report.cells.iter().filter(|c| c.protocol == protocol).collect();
    let variants = report
        .config
        .variants
        .iter()
        .copied()
        .filter(|v| cells.iter().any(|c| c.variant == *v))
        .collect();
    let mut fractions: Vec<f64> = report
        .config
        .fractions
        .iter()
        .copied()
        .filter(|f| cells.iter().any(|c| c.fraction == *f))
        .collect();
    fractions.sort_by(f64::total_cmp);
    Layout { variants, fractions }
}

/// Protocols with at least one cell, in config order.
pub fn reported_protocols(report: &MetricsReport) -> Vec<Protocol> {
    report
        .config
        .protocols
        .iter()
        .copied()
        .filter(|p| report.cells.iter().any(|c| c.protocol == *p))
        .collect()
}

fn cell_text(cell: Option<&CellSummary>, metric: TableMetric) -> String {
    let Some(cell) = cell else {
        return String::new();
    };
    match headline(cell, metric) {
        Some(s) => match s.sd {
            Some(sd) => format!("{:.2} ({:.2})", 100.0 * s.mean, 100.0 * sd),
            None => format!("{:.2}", 100.0 * s.mean),
        },
        None => "failed".into(),
    }
}

/// One row per variant, one column per fraction; cells are `mean (sd)` in
/// percent, or just the mean for single runs.
pub fn render_csv(report: &MetricsReport, protocol: Protocol) -> Result<String> {
    let metric = report.config.table_metric;
    let layout = layout(report, protocol);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant".to_string()];
    header.extend(layout.fractions.iter().map(|&f| fraction_label(f)));
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for &v in &layout.variants {
        let mut row = vec![v.display_name().to_string()];
        row.extend(
            layout
                .fractions
                .iter()
                .map(|&f| cell_text(report.cell(v, protocol, f), metric)),
        );
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn color(v: Variant) -> &'static str {
    match v {
        Variant::None => "#9e9e9e",
        Variant::Supervised => "#4e79a7",
        Variant::Moco => "#f28e2b",
        Variant::Mocotp => "#59a14f",
    }
}

const BAR_W: f64 = 22.0;
const GROUP_GAP: f64 = 26.0;
const PLOT_H: f64 = 200.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 52.0;
const BOTTOM: f64 = 40.0;
const LEGEND_W: f64 = 130.0;

/// Grouped bar chart: x groups are fractions, bars are variants, error bars
/// span one standard deviation.
pub fn render_svg(report: &MetricsReport, protocol: Protocol) -> String {
    let metric = report.config.table_metric;
    let layout = layout(report, protocol);
    let nv = layout.variants.len().max(1) as f64;
    let group_w = nv * BAR_W + GROUP_GAP;
    let plot_w = group_w * layout.fractions.len().max(1) as f64;
    let width = LEFT + plot_w + LEGEND_W;
    let height = TOP + PLOT_H + BOTTOM;
    let y_of = |pct: f64| TOP + PLOT_H * (1.0 - pct.clamp(0.0, 100.0) / 100.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="13">{}: {} (%)</text>"#,
        LEFT,
        protocol_title(protocol),
        metric_title(metric)
    );
    for tick in (0..=100).step_by(20) {
        let y = y_of(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (g, &f) in layout.fractions.iter().enumerate() {
        let x0 = LEFT + g as f64 * group_w + GROUP_GAP / 2.0;
        for (i, &v) in layout.variants.iter().enumerate() {
            let Some(sum) = report.cell(v, protocol, f).and_then(|c| headline(c, metric)) else {
                continue;
            };
            let x = x0 + i as f64 * BAR_W;
            let mean = 100.0 * sum.mean;
            let y = y_of(mean);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                x + 1.0,
                BAR_W - 2.0,
                TOP + PLOT_H - y,
                color(v)
            );
            if let Some(sd) = sum.sd {
                let (lo, hi) = (y_of(mean - 100.0 * sd), y_of(mean + 100.0 * sd));
                let cx = x + BAR_W / 2.0;
                let _ = writeln!(
                    s,
                    r##"<path d="M{cx:.1} {lo:.1}V{hi:.1}M{:.1} {lo:.1}H{:.1}M{:.1} {hi:.1}H{:.1}" stroke="#222222" fill="none"/>"##,
                    cx - 4.0,
                    cx + 4.0,
                    cx - 4.0,
                    cx + 4.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + nv * BAR_W / 2.0,
            TOP + PLOT_H + 16.0,
            fraction_label(f)
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#222222"/>"##,
        TOP + PLOT_H,
        LEFT + plot_w,
        TOP + PLOT_H
    );
    for (i, &v) in layout.variants.iter().enumerate() {
        let x = LEFT + plot_w + 14.0;
        let y = TOP + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="12" height="12" fill="{}"/>"#,
            color(v)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 18.0,
            y + 10.0,
            v.display_name()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<protocol>.csv` and `<protocol>.svg` into `dir` for every
/// reported protocol.
pub fn write_tables(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let protocols = reported_protocols(report);
    if protocols.is_empty() {
        return Err(Error::Usage("report has no cells to emit".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for p in protocols {
        let csv_path = dir.join(format!("{p}.csv"));
        fs::write(&csv_path, render_csv(report, p)?).map_err(|e| Error::io(&csv_path, e))?;
        let svg_path = dir.join(format!("{p}.svg"));
        fs::write(&svg_path, render_svg(report, p)).map_err(|e| Error::io(&svg_path, e))?;
        written.push(csv_path);
        written.push(svg_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_labels() {
        assert_eq!(fraction_label(0.01), "1%");
        assert_eq!(fraction_label(0.1), "10%");
        assert_eq!(fraction_label(1.0), "100%");
        assert_eq!(fraction_label(0.125), "12.5%");
    }
}
