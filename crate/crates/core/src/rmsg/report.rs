//! CSV, JSON and SVG output of RMSG results.

use std::fmt::Write as _;
use std::path::Path;

use super::residuals::ResidualReport;
use super::sweep::SweepRow;
use super::train::RmsgRunReport;
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

/// One row per seed.
pub fn write_runs_csv(report: &RmsgRunReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "seed", "param_count", "rmse", "mae", "r2", "best_val_rmse", "error"])
        .map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            report.model.clone(),
            r.seed.to_string(),
            report.param_count.to_string(),
            opt(r.metrics.map(|m| m.rmse)),
            opt(r.metrics.map(|m| m.mae)),
            opt(r.metrics.map(|m| m.r2)),
            opt(r.best_val_rmse),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Histogram and label-binned curve, one table each.
pub fn write_residuals_csv(report: &ResidualReport, hist_path: &Path, bins_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(hist_path).map_err(csv_err)?;
    w.write_record(["lo", "hi", "count"]).map_err(csv_err)?;
    for (k, c) in report.histogram.counts.iter().enumerate() {
        let e = &report.histogram.edges;
        w.write_record([e[k].to_string(), e[k + 1].to_string(), c.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(bins_path).map_err(csv_err)?;
    w.write_record(["label_lo", "label_hi", "count", "mean_residual", "mean_prediction"])
        .map_err(csv_err)?;
    for b in &report.label_bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.count.to_string(),
            opt(b.mean_residual),
            opt(b.mean_prediction),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "size", "param_count", "mean_r2", "std_r2", "mean_rmse", "failed"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.report.model.clone(),
            r.size.to_string(),
            r.param_count.to_string(),
            opt(r.report.mean.map(|m| m.r2)),
            opt(r.report.std.map(|m| m.r2)),
            opt(r.report.mean.map(|m| m.rmse)),
            r.report.failed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

/// Two-panel chart: residual histogram and mean residual per label bin.
pub fn residual_svg(report: &ResidualReport, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif" font-size="11">"#,
        2.0 * W
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="16">{}</text>"#, escape(title));

    let max = *report.histogram.counts.iter().max().unwrap_or(&1).max(&1) as f64;
    let n = report.histogram.counts.len() as f64;
    let bw = (W - 2.0 * PAD) / n;
    for (k, &c) in report.histogram.counts.iter().enumerate() {
        let h = (H - 2.0 * PAD) * c as f64 / max;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0"/>"##,
            PAD + bw * k as f64,
            H - PAD - h,
            bw * 0.9,
            h
        );
    }
    let e = &report.histogram.edges;
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}">residual {:.3} .. {:.3}</text>"#, H - 12.0, e[0], e[e.len() - 1]);

    let pts: Vec<(f64, f64)> = report
        .label_bins
        .iter()
        .filter_map(|b| b.mean_residual.map(|m| (0.5 * (b.lo + b.hi), m)))
        .collect();
    let (x0, x1) = (report.labels.min, report.labels.max.max(report.labels.min + 1e-12));
    let ymax = pts.iter().fold(1e-12f64, |m, p| m.max(p.1.abs()));
    let sx = |x: f64| W + PAD + (W - 2.0 * PAD) * (x - x0) / (x1 - x0);
    let sy = |y: f64| H / 2.0 - (H / 2.0 - PAD) * y / ymax;
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888"/>"##,
        W + PAD,
        H / 2.0,
        2.0 * W - PAD,
        H / 2.0
    );
    let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#dd8452" stroke-width="2"/>"##,
        path.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">mean residual by label (±{ymax:.3})</text>"#,
        W + PAD,
        H - 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
