//! Standalone SVG charts. Output depends only on the input values, so equal
//! inputs give identical bytes.

use std::fmt::Write;

use anyhow::{bail, Result};
use framebench::framing::FramingKind;
use framebench::treeshap::{ImportanceTable, SummaryFeature};

const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";
const BAR: &str = "#1f77b4";
const LOW: &str = "#1f77b4";
const MID: &str = "#9467bd";
const HIGH: &str = "#d62728";
const MISSING: &str = "#bdbdbd";
/// Dots drawn per feature or scatter; larger inputs are thinned by stride.
const MAX_POINTS: usize = 1500;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-size=\"{size}\" {FONT}>{}</text>",
        esc(s)
    );
}

fn line(out: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
    let _ = writeln!(
        out,
        "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"1\"/>"
    );
}

fn thin<T: Copy>(xs: &[T]) -> Vec<T> {
    let stride = xs.len().div_ceil(MAX_POINTS).max(1);
    xs.iter().step_by(stride).copied().collect()
}

/// Extends a degenerate range so scaling never divides by zero.
fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Horizontal bars of the `k` most important features, largest on top.
pub fn plot_importance(names: &[String], table: &ImportanceTable, k: usize, title: &str) -> Result<String> {
    let top = table.top(k);
    if top.is_empty() {
        bail!("importance table is empty");
    }
    let (w, row_h, left, right, top_pad) = (640.0, 28.0, 170.0, 80.0, 50.0);
    let h = top_pad + row_h * top.len() as f64 + 40.0;
    let max = top.iter().map(|&j| table.mean_abs[j]).fold(0.0, f64::max);
    let scale = if max > 0.0 { (w - left - right) / max } else { 0.0 };
    let mut s = open(w, h);
    text(&mut s, w / 2.0, 24.0, "middle", 15, title);
    for (r, &j) in top.iter().enumerate() {
        let y = top_pad + r as f64 * row_h;
        let v = table.mean_abs[j];
        let _ = writeln!(
            s,
            "<rect x=\"{left:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{BAR}\"/>",
            y + 4.0,
            v * scale,
            row_h - 8.0
        );
        text(&mut s, left - 8.0, y + row_h / 2.0 + 4.0, "end", 12, &names[j]);
        text(&mut s, left + v * scale + 6.0, y + row_h / 2.0 + 4.0, "start", 11, &format!("{v:.4}"));
    }
    let axis_y = top_pad + row_h * top.len() as f64 + 4.0;
    line(&mut s, left, top_pad, left, axis_y, "black");
    text(&mut s, left + (w - left - right) / 2.0, axis_y + 24.0, "middle", 12, "mean |SHAP value| (log-odds)");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Tercile of each present value among the feature's present values.
fn terciles(values: &[Option<f64>]) -> Vec<Option<usize>> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    present.sort_by(f64::total_cmp);
    if present.is_empty() {
        return vec![None; values.len()];
    }
    let q1 = present[present.len() / 3];
    let q2 = present[2 * present.len() / 3];
    values
        .iter()
        .map(|v| v.map(|v| if v < q1 { 0 } else if v < q2 { 1 } else { 2 }))
        .collect()
}

/// Dot strips of phi per feature, colored by value tercile; features in the
/// order given.
pub fn plot_summary(features: &[&SummaryFeature], title: &str) -> Result<String> {
    if features.is_empty() || features.iter().all(|f| f.dots.is_empty()) {
        bail!("no SHAP values to summarize");
    }
    let (w, row_h, left, right, top_pad) = (700.0, 34.0, 170.0, 30.0, 50.0);
    let h = top_pad + row_h * features.len() as f64 + 70.0;
    let (lo, hi) = features
        .iter()
        .flat_map(|f| f.dots.iter().map(|d| d.phi))
        .fold((0.0f64, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
    let (lo, hi) = span(lo, hi);
    let x_of = |p: f64| left + (p - lo) / (hi - lo) * (w - left - right);
    let mut s = open(w, h);
    text(&mut s, w / 2.0, 24.0, "middle", 15, title);
    let bottom = top_pad + row_h * features.len() as f64;
    line(&mut s, x_of(0.0), top_pad, x_of(0.0), bottom, "#888888");
    for (r, f) in features.iter().enumerate() {
        let y0 = top_pad + r as f64 * row_h;
        text(&mut s, left - 8.0, y0 + row_h / 2.0 + 4.0, "end", 12, &f.name);
        let dots = thin(&f.dots);
        let values: Vec<Option<f64>> = dots.iter().map(|d| d.value).collect();
        for (i, (d, t)) in dots.iter().zip(terciles(&values)).enumerate() {
            // golden-ratio jitter keeps the strip readable and deterministic
            let jitter = (i as f64 * 0.618_033_988_75).fract() - 0.5;
            let color = match t {
                Some(0) => LOW,
                Some(1) => MID,
                Some(_) => HIGH,
                None => MISSING,
            };
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                x_of(d.phi),
                y0 + row_h / 2.0 + jitter * (row_h - 10.0)
            );
        }
    }
    line(&mut s, left, bottom, w - right, bottom, "black");
    text(&mut s, left, bottom + 16.0, "middle", 11, &format!("{lo:.3}"));
    text(&mut s, w - right, bottom + 16.0, "middle", 11, &format!("{hi:.3}"));
    text(&mut s, (left + w - right) / 2.0, bottom + 32.0, "middle", 12, "SHAP value (log-odds)");
    let legend_y = bottom + 54.0;
    for (k, (label, color)) in [("low", LOW), ("middle", MID), ("high", HIGH), ("missing", MISSING)].iter().enumerate() {
        let x = left + k as f64 * 110.0;
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{color}\"/>", legend_y - 4.0);
        text(&mut s, x + 10.0, legend_y, "start", 11, &format!("{label} value"));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Feature value against its SHAP value.
pub fn plot_dependence(points: &[(f64, f64)], feature: &str, title: &str) -> Result<String> {
    if points.is_empty() {
        bail!("no observed values of {feature} to plot");
    }
    let (w, h, left, right, top, bottom) = (560.0, 420.0, 70.0, 20.0, 45.0, 55.0);
    let fold = |f: fn(&(f64, f64)) -> f64| {
        points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    let ((x0, x1), (y0, y1)) = (span(x0, x1), span(y0, y1));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = open(w, h);
    text(&mut s, w / 2.0, 24.0, "middle", 15, title);
    line(&mut s, left, h - bottom, w - right, h - bottom, "black");
    line(&mut s, left, top, left, h - bottom, "black");
    if y0 < 0.0 && y1 > 0.0 {
        line(&mut s, left, py(0.0), w - right, py(0.0), "#888888");
    }
    for &(x, y) in &thin(points) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{BAR}\" fill-opacity=\"0.5\"/>",
            px(x),
            py(y)
        );
    }
    text(&mut s, left, h - bottom + 16.0, "middle", 11, &format!("{x0:.2}"));
    text(&mut s, w - right, h - bottom + 16.0, "middle", 11, &format!("{x1:.2}"));
    text(&mut s, left - 6.0, h - bottom, "end", 11, &format!("{y0:.3}"));
    text(&mut s, left - 6.0, top + 4.0, "end", 11, &format!("{y1:.3}"));
    text(&mut s, (left + w - right) / 2.0, h - 14.0, "middle", 12, feature);
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" {FONT} transform=\"rotate(-90 16 {:.2})\">SHAP value for {}</text>",
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0,
        esc(feature)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Mean and CI half-width per metric for one framing.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBar {
    pub framing: String,
    pub auroc: Option<(f64, f64)>,
    pub auprc: Option<(f64, f64)>,
}

/// Sorts bars into the canonical framing order (unknown names last).
pub fn canonical_order(bars: &mut [MetricBar]) {
    let rank = |name: &str| FramingKind::ALL.iter().position(|k| k.as_str() == name).unwrap_or(usize::MAX);
    bars.sort_by(|a, b| rank(&a.framing).cmp(&rank(&b.framing)).then_with(|| a.framing.cmp(&b.framing)));
}

fn short_name(framing: &str) -> String {
    framing
        .parse::<FramingKind>()
        .map(|k| k.title().to_string())
        .unwrap_or_else(|_| framing.to_string())
}

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 300.0;

fn panel(s: &mut String, x: f64, bars: &[(String, Option<(f64, f64)>)], ymax: f64, title: &str, clip: usize) {
    let (top, bottom, left) = (60.0, 110.0, 50.0);
    let plot_h = PANEL_H - top - bottom + 60.0;
    let base = top + plot_h;
    let py = |v: f64| base - (v / ymax).min(1.0) * plot_h;
    let _ = writeln!(
        s,
        "<clipPath id=\"clip{clip}\"><rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{plot_h:.2}\"/></clipPath>",
        x + left,
        PANEL_W - left - 10.0
    );
    text(s, x + PANEL_W / 2.0, 40.0, "middle", 13, title);
    line(s, x + left, top, x + left, base, "black");
    line(s, x + left, base, x + PANEL_W - 10.0, base, "black");
    for k in 0..=4 {
        let v = ymax * f64::from(k) / 4.0;
        line(s, x + left - 4.0, py(v), x + left, py(v), "black");
        text(s, x + left - 6.0, py(v) + 4.0, "end", 10, &format!("{v:.3}"));
    }
    let slot = (PANEL_W - left - 10.0) / bars.len() as f64;
    for (i, (name, m)) in bars.iter().enumerate() {
        let cx = x + left + slot * (i as f64 + 0.5);
        if let Some((mean, half)) = *m {
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{BAR}\" clip-path=\"url(#clip{clip})\"/>",
                cx - slot * 0.3,
                py(mean),
                slot * 0.6,
                base - py(mean)
            );
            let (lo, hi) = (py((mean - half).max(0.0)), py(mean + half));
            let _ = writeln!(s, "<g clip-path=\"url(#clip{clip})\">");
            line(s, cx, lo, cx, hi, "black");
            line(s, cx - 6.0, lo, cx + 6.0, lo, "black");
            line(s, cx - 6.0, hi, cx + 6.0, hi, "black");
            s.push_str("</g>\n");
        } else {
            text(s, cx, base - 6.0, "middle", 10, "n/a");
        }
        let _ = writeln!(
            s,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\" {FONT} transform=\"rotate(-40 {cx:.2} {:.2})\">{}</text>",
            base + 14.0,
            base + 14.0,
            esc(&short_name(name))
        );
    }
}

/// AUROC and AUPRC bars with CI whiskers, plus an AUPRC panel magnified to
/// `[0, zoom_ymax]`.
pub fn plot_metrics(bars: &[MetricBar], zoom_ymax: f64) -> Result<String> {
    if bars.is_empty() {
        bail!("no framings to plot");
    }
    if !(zoom_ymax > 0.0) {
        bail!("zoom bound must be positive");
    }
    let mut s = open(3.0 * PANEL_W, PANEL_H + 20.0);
    let roc: Vec<_> = bars.iter().map(|b| (b.framing.clone(), b.auroc)).collect();
    let pr: Vec<_> = bars.iter().map(|b| (b.framing.clone(), b.auprc)).collect();
    text(&mut s, 1.5 * PANEL_W, 18.0, "middle", 15, "Cross-validated performance (mean, 95% CI)");
    panel(&mut s, 0.0, &roc, 1.0, "AUROC", 0);
    panel(&mut s, PANEL_W, &pr, 1.0, "AUPRC", 1);
    panel(&mut s, 2.0 * PANEL_W, &pr, zoom_ymax, &format!("AUPRC, magnified to {zoom_ymax}"), 2);
    s.push_str("</svg>\n");
    Ok(s)
}
