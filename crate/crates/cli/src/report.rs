//! Figures from a verification report: violation histogram, mean violation
//! per control configuration and percent reduction per scenario group.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use voltplan_core::pipeline::{stable, VerifyRun};
use voltplan_core::{Error, Result};

use crate::commands::{csv_string, write};
use crate::ReportFormat;

const BINS: usize = 20;

pub struct Histogram {
    pub edges: Vec<f64>,
    pub base: Vec<usize>,
    pub planned: Vec<usize>,
}

pub fn histogram(run: &VerifyRun) -> Histogram {
    let values = |r: &voltplan_core::verifier::ViolationReport<f64>| -> Vec<f64> {
        r.steps.iter().filter_map(|s| s.violation_metric).collect()
    };
    let (b, p) = (values(&run.base), values(&run.planned));
    let top = b.iter().chain(&p).fold(0.0f64, |m, &v| m.max(v));
    let width = if top > 0.0 { top / BINS as f64 } else { 1.0 / BINS as f64 };
    let edges: Vec<f64> = (0..=BINS).map(|i| i as f64 * width).collect();
    let count = |vals: &[f64]| {
        let mut c = vec![0usize; BINS];
        for &v in vals {
            let k = ((v / width) as usize).min(BINS - 1);
            c[k] += 1;
        }
        c
    };
    Histogram { base: count(&b), planned: count(&p), edges }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped vertical bar chart; `series` holds one value per category each.
fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[(&str, &str, Vec<f64>)]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 90.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let vmax = series
        .iter()
        .flat_map(|s| s.2.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let y0 = top + plot_h;
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, w - right);
    for t in 0..=4 {
        let v = vmax * t as f64 / 4.0;
        let y = y0 - plot_h * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, fmt_tick(v));
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, w - right);
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    let n = categories.len().max(1) as f64;
    let group_w = plot_w / n;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let gx = left + group_w * c as f64 + group_w * 0.1;
        for (k, (_, color, vals)) in series.iter().enumerate() {
            let v = vals[c].max(0.0);
            let bh = plot_h * v / vmax;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                gx + bar_w * k as f64,
                y0 - bh,
                bar_w,
                bh
            );
        }
        let cx = left + group_w * (c as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="end" transform="rotate(-35 {cx:.2} {:.2})">{}</text>"#,
            y0 + 14.0,
            y0 + 14.0,
            escape(name)
        );
    }
    for (k, (label, color, _)) in series.iter().enumerate() {
        let x = w - right - 150.0;
        let y = top + 4.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 18.0, y + 10.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.2e}")
    }
}

pub fn render(report_path: &Path, format: ReportFormat, out: &Path) -> Result<()> {
    let text = fs::read_to_string(report_path).map_err(|e| Error::io(report_path, e))?;
    let run: VerifyRun = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: report_path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let hist = histogram(&run);
    let bin_names: Vec<String> = hist.edges.windows(2).map(|e| format!("{:.4}", e[0])).collect();
    let eval_names: Vec<String> = run.evaluations.iter().map(|e| e.name.clone()).collect();
    let groups: Vec<&voltplan_core::verifier::ReductionRow<f64>> = run.reductions.iter().collect();
    let group_names: Vec<String> = groups.iter().map(|g| g.group.clone()).collect();

    let written = match format {
        ReportFormat::Svg => {
            let files = [
                (
                    "violation_histogram.svg",
                    bar_chart(
                        "Distribution of yearly voltage violations",
                        "time steps",
                        &bin_names,
                        &[
                            ("base", "#9aa5b1", hist.base.iter().map(|&c| c as f64).collect()),
                            ("planned", "#2f6f9f", hist.planned.iter().map(|&c| c as f64).collect()),
                        ],
                    ),
                ),
                (
                    "support_comparison.svg",
                    bar_chart(
                        "Mean violation per control configuration",
                        "mean violation (pu)",
                        &eval_names,
                        &[("mean violation", "#2f6f9f", run.evaluations.iter().map(|e| e.aggregates.mean).collect())],
                    ),
                ),
                (
                    "reduction_by_group.svg",
                    bar_chart(
                        "Reduction of total violation by scenario group",
                        "reduction (%)",
                        &group_names,
                        &[(
                            "percent reduction",
                            "#3f8f4f",
                            groups.iter().map(|g| g.percent_reduction.unwrap_or(0.0)).collect(),
                        )],
                    ),
                ),
            ];
            for (name, body) in &files {
                write(&out.join(name), body)?;
            }
            files.len()
        }
        ReportFormat::Csv => {
            let hist_rows = hist.edges.windows(2).enumerate().map(|(i, e)| {
                vec![
                    stable(e[0]).to_string(),
                    stable(e[1]).to_string(),
                    hist.base[i].to_string(),
                    hist.planned[i].to_string(),
                ]
            });
            write(
                &out.join("violation_histogram.csv"),
                csv_string(&["bin_lo", "bin_hi", "base_count", "planned_count"], hist_rows),
            )?;
            let eval_rows = run.evaluations.iter().map(|e| {
                vec![
                    e.name.clone(),
                    e.plan_applied.to_string(),
                    e.pv_q_support.to_string(),
                    stable(e.aggregates.mean).to_string(),
                    stable(e.aggregates.total).to_string(),
                    e.aggregates.count_violated.to_string(),
                ]
            });
            write(
                &out.join("support_comparison.csv"),
                csv_string(&["configuration", "plan_applied", "pv_q_support", "mean", "total", "count_violated"], eval_rows),
            )?;
            let red_rows = groups.iter().map(|g| {
                vec![
                    g.group.clone(),
                    g.steps.to_string(),
                    stable(g.base_total).to_string(),
                    stable(g.planned_total).to_string(),
                    g.percent_reduction.map(|p| stable(p).to_string()).unwrap_or_default(),
                ]
            });
            write(
                &out.join("reduction_by_group.csv"),
                csv_string(&["group", "steps", "base_total", "planned_total", "percent_reduction"], red_rows),
            )?;
            3
        }
    };
    println!("{written} files written to {}", out.display());
    Ok(())
}
