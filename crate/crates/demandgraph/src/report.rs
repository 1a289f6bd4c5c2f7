//! Metrics reports: `metrics.json` and an `accuracy.svg` bar chart.
//!
//! `metrics.json` is a JSON array of reports. Each report has:
//!
//! | field | type | meaning |
//! |---|---|---|
//! | `method` | string | evaluated method, `proposed` for the disentangled model |
//! | `train_regions` | [string] | regions the model was trained on |
//! | `regions` | {region: Metrics} | metrics on each evaluated region |
//! | `baselines` | {name: {region: Metrics}} | baselines on the same snapshots |
//! | `config_fingerprint` | string | hash of the experiment config |
//! | `seed` | integer | master seed |
//! | `warnings` | [string] | e.g. evaluation on a training region |
//!
//! `Metrics` holds `accuracy` (share of predictions off by less than 2
//! trips), `mae`, `predictions` and `snapshots`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use demandgraph_core::eval::MetricsReport;

use crate::error::{AppError, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const CHART_FILE: &str = "accuracy.svg";

const BAR_W: f64 = 22.0;
const GROUP_GAP: f64 = 30.0;
const PLOT_H: f64 = 240.0;
const TOP: f64 = 30.0;
const LEFT: f64 = 50.0;
const COLORS: [&str; 6] = ["#1b6ca8", "#e07b39", "#6aa84f", "#a64d79", "#999999", "#c9a227"];

/// Bars of one held-out region: `(method, accuracy)`.
fn groups(reports: &[MetricsReport]) -> Vec<(String, Vec<(String, f64)>)> {
    let mut out = Vec::new();
    for report in reports {
        for (region, metrics) in &report.regions {
            let mut bars = vec![(report.method.clone(), metrics.accuracy)];
            for (name, per_region) in &report.baselines {
                if let Some(m) = per_region.get(region) {
                    bars.push((name.clone(), m.accuracy));
                }
            }
            out.push((region.clone(), bars));
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(reports: &[MetricsReport]) -> String {
    let groups = groups(reports);
    let mut methods: Vec<String> = Vec::new();
    for (_, bars) in &groups {
        for (m, _) in bars {
            if !methods.contains(m) {
                methods.push(m.clone());
            }
        }
    }
    let group_w = BAR_W * methods.len().max(1) as f64;
    let width = LEFT + groups.len() as f64 * (group_w + GROUP_GAP) + GROUP_GAP + 160.0;
    let height = TOP + PLOT_H + 50.0;
    let base = TOP + PLOT_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="{LEFT}" y="18" font-size="13">One-off accuracy on held-out regions</text>"#);
    for tick in 0..=4 {
        let v = f64::from(tick) * 0.25;
        let y = base - v * PLOT_H;
        let _ = writeln!(svg, r##"<line x1="{LEFT}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, width - 160.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
    }
    for (gi, (region, bars)) in groups.iter().enumerate() {
        let x0 = LEFT + GROUP_GAP + gi as f64 * (group_w + GROUP_GAP);
        for (name, acc) in bars {
            let mi = methods.iter().position(|m| m == name).unwrap_or(0);
            let h = acc.clamp(0.0, 1.0) * PLOT_H;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{}: {acc:.4}</title></rect>"#,
                x0 + mi as f64 * BAR_W,
                base - h,
                BAR_W - 2.0,
                COLORS[mi % COLORS.len()],
                escape(name)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + group_w / 2.0,
            base + 16.0,
            escape(region)
        );
    }
    let legend_x = width - 150.0;
    for (mi, m) in methods.iter().enumerate() {
        let y = TOP + 10.0 + mi as f64 * 18.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{legend_x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 10.0,
            COLORS[mi % COLORS.len()],
            legend_x + 18.0,
            escape(m)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `metrics.json` and `accuracy.svg` into `out_dir`.
pub fn render_report(reports: &[MetricsReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(AppError::Config("render_report needs at least one report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let json_path = out_dir.join(METRICS_FILE);
    let text = serde_json::to_string_pretty(reports).map_err(|e| AppError::corrupt(&json_path, e))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| AppError::io(&json_path, e))?;
    let svg_path = out_dir.join(CHART_FILE);
    std::fs::write(&svg_path, render_svg(reports)).map_err(|e| AppError::io(&svg_path, e))?;
    Ok(vec![json_path, svg_path])
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::corrupt(path, e))
}
