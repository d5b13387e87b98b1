//! Delimited tables, the JSON report, and SVG figures that carry their own
//! data as an embedded CSV block.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{AccuracySummary, Credible, RankingReport, SrocCurve, SummaryError, SummaryMode, ThresholdCurve};
use crate::inference::{DicReport, FitDiagnostics};
use crate::model::ModelSpec;

/// One row of the summary table: a test, a threshold and one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub test_id: String,
    pub threshold: String,
    pub measure: String,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Sensitivity, specificity and FPF rows of each summary.
pub fn summary_rows(summaries: &[AccuracySummary]) -> Vec<SummaryRow> {
    let mut rows = Vec::with_capacity(3 * summaries.len());
    for s in summaries {
        for (measure, c) in [("sensitivity", s.sensitivity), ("specificity", s.specificity()), ("fpf", s.fpf)] {
            rows.push(SummaryRow {
                test_id: s.test_id.clone(),
                threshold: s.threshold.to_string(),
                measure: measure.to_string(),
                median: c.median,
                lower95: c.lower,
                upper95: c.upper,
            });
        }
    }
    rows
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), SummaryError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| SummaryError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

fn rows_csv(rows: &[SummaryRow]) -> String {
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Everything a fit produces, in one structured file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub spec: ModelSpec,
    pub mode: SummaryMode,
    pub reference: Vec<AccuracySummary>,
    pub curves: Vec<ThresholdCurve>,
    pub sroc: Vec<SrocCurve>,
    pub rankings: Option<RankingReport>,
    pub dic: Option<DicReport>,
    pub diagnostics: Option<FitDiagnostics>,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    log_x: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (a, b, x) = if self.log_x { (self.x0.ln(), self.x1.ln(), x.ln()) } else { (self.x0, self.x1, x) };
        let t = if b > a { (x - a) / (b - a) } else { 0.5 };
        LEFT + t * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - y * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(svg: &mut String, title: &str, data: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<metadata id="data" type="text/csv"><![CDATA[{data}]]></metadata>"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn axes(svg: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: &[f64]) {
    let (xa, xb, ya, yb) = (LEFT, W - RIGHT, f.py(0.0), f.py(1.0));
    let _ = writeln!(svg, r#"<rect x="{xa}" y="{yb}" width="{}" height="{}" fill="none" stroke="black"/>"#, xb - xa, ya - yb);
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let py = f.py(y);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{xa}" y2="{py:.2}" stroke="black"/>"#, xa - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.1}</text>"#, xa - 7.0, py + 4.0);
    }
    for &x in xticks {
        let px = f.px(x);
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{ya}" x2="{px:.2}" y2="{}" stroke="black"/>"#, ya + 4.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, ya + 18.0, format_tick(x));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (xa + xb) / 2.0, H - 14.0, escape(xlabel));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (ya + yb) / 2.0,
        escape(ylabel)
    );
}

fn format_tick(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e4 || x.abs() < 1e-2) {
        format!("{x:.1e}")
    } else {
        let s = format!("{x:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], style: &str) {
    let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" {style}/>"#, d.join(" "));
}

fn band(svg: &mut String, f: &Frame, xs: &[f64], cs: &[Credible], fill: &str) {
    let mut pts: Vec<String> = xs.iter().zip(cs).map(|(&x, c)| format!("{:.2},{:.2}", f.px(x), f.py(c.upper))).collect();
    pts.extend(xs.iter().zip(cs).rev().map(|(&x, c)| format!("{:.2},{:.2}", f.px(x), f.py(c.lower))));
    let _ = writeln!(svg, r#"<polygon points="{}" fill="{fill}" fill-opacity="0.25" stroke="none"/>"#, pts.join(" "));
}

fn legend(svg: &mut String, items: &[(&str, &str)]) {
    for (i, (label, style)) in items.iter().enumerate() {
        let y = TOP + 14.0 + 16.0 * i as f64;
        let x = W - RIGHT - 150.0;
        let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" {style}/>"#, x + 24.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 30.0, y + 4.0, escape(label));
    }
}

fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(lo > 0.0 && hi > lo) {
        return vec![lo];
    }
    let mut ticks = Vec::new();
    let mut p = 10f64.powi(lo.log10().floor() as i32);
    while p <= hi * 1.0000001 {
        for m in [1.0, 2.0, 5.0] {
            let t = p * m;
            if t >= lo * 0.9999999 && t <= hi * 1.0000001 {
                ticks.push(t);
            }
        }
        p *= 10.0;
    }
    if ticks.len() < 2 {
        ticks = vec![lo, hi];
    }
    ticks
}

/// Sensitivity and specificity against threshold, with 95% bands.
pub fn threshold_curve_svg(curve: &ThresholdCurve, title: &str) -> String {
    let xs = curve.grid();
    let sens: Vec<Credible> = curve.points.iter().map(|p| p.sensitivity).collect();
    let spec: Vec<Credible> = curve.points.iter().map(|p| p.specificity()).collect();
    let data = rows_csv(&summary_rows(&curve.points));
    let mut svg = String::new();
    header(&mut svg, title, &data);
    let (lo, hi) = (xs.first().copied().unwrap_or(1.0), xs.last().copied().unwrap_or(1.0));
    let f = Frame { x0: lo, x1: hi, log_x: lo > 0.0 && hi > lo };
    axes(&mut svg, &f, "threshold", "probability", &log_ticks(lo, hi));
    band(&mut svg, &f, &xs, &sens, "#1f77b4");
    band(&mut svg, &f, &xs, &spec, "#d62728");
    let line = |cs: &[Credible]| -> Vec<(f64, f64)> { xs.iter().zip(cs).map(|(&x, c)| (f.px(x), f.py(c.median))).collect() };
    let s1 = r##"stroke="#1f77b4" stroke-width="2""##;
    let s2 = r##"stroke="#d62728" stroke-width="2" stroke-dasharray="6 4""##;
    polyline(&mut svg, &line(&sens), s1);
    polyline(&mut svg, &line(&spec), s2);
    legend(&mut svg, &[("sensitivity", s1), ("specificity", s2)]);
    svg.push_str("</svg>\n");
    svg
}

/// Summary ROC curve, its pointwise band and the credible ellipse.
pub fn sroc_svg(curve: &SrocCurve, title: &str) -> String {
    let mut data = String::from("series,fpf,sensitivity,lower95,upper95\n");
    for p in &curve.points {
        let _ = writeln!(data, "curve,{},{},{},{}", p.fpf, p.sensitivity.median, p.sensitivity.lower, p.sensitivity.upper);
    }
    for b in &curve.ellipse.boundary {
        let _ = writeln!(data, "ellipse,{},{},,", b[0], b[1]);
    }
    let c = curve.ellipse.center;
    let _ = writeln!(data, "center,{},{},,", crate::math::expit(c[0]), crate::math::expit(c[1]));
    let mut svg = String::new();
    header(&mut svg, title, &data);
    let f = Frame { x0: 0.0, x1: 1.0, log_x: false };
    axes(&mut svg, &f, "false positive fraction (1 − specificity)", "sensitivity", &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let xs: Vec<f64> = curve.points.iter().map(|p| p.fpf).collect();
    let cs: Vec<Credible> = curve.points.iter().map(|p| p.sensitivity).collect();
    let s1 = r##"stroke="#1f77b4" stroke-width="2""##;
    let s2 = r##"stroke="#2ca02c" stroke-width="1.5" stroke-dasharray="4 3""##;
    let mut items = vec![("credible ellipse", s2)];
    if !xs.is_empty() {
        band(&mut svg, &f, &xs, &cs, "#1f77b4");
        let med: Vec<(f64, f64)> = xs.iter().zip(&cs).map(|(&x, c)| (f.px(x), f.py(c.median))).collect();
        polyline(&mut svg, &med, s1);
        items.insert(0, ("sROC median", s1));
    }
    let ell: Vec<(f64, f64)> = curve.ellipse.boundary.iter().map(|b| (f.px(b[0]), f.py(b[1]))).collect();
    polyline(&mut svg, &ell, s2);
    let _ = writeln!(
        svg,
        r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="black"/>"#,
        f.px(crate::math::expit(c[0])),
        f.py(crate::math::expit(c[1]))
    );
    legend(&mut svg, &items);
    if let Some(flag) = &curve.flag {
        let _ = writeln!(svg, r#"<text x="{LEFT}" y="{}" fill="gray">{}</text>"#, TOP + 14.0, escape(flag));
    }
    svg.push_str("</svg>\n");
    svg
}
