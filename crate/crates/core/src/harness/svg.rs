//! Minimal deterministic SVG plots.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub(crate) struct Line<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Extra `data-*` attributes on the path, already formatted.
    pub attrs: Vec<(&'static str, String)>,
    /// Suffix for the legend entry.
    pub note: Option<String>,
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + (W - LEFT - RIGHT) / 2.0, escape(title));
}

fn axes(out: &mut String, xr: (f64, f64), yr: (f64, f64), xlabel: &str, ylabel: &str) {
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(out, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 16.0, tick(xr.0 + f * (xr.1 - xr.0)));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(yr.0 + f * (yr.1 - yr.0)));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub(crate) fn line_plot(title: &str, xlabel: &str, ylabel: &str, lines: &[Line]) -> String {
    let xr = range(lines.iter().flat_map(|l| l.points.iter().map(|p| p.0)));
    let yr = range(lines.iter().flat_map(|l| l.points.iter().map(|p| p.1)));
    let sx = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - (y - yr.0) / (yr.1 - yr.0) * (H - BOTTOM - TOP);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, xr, yr, xlabel, ylabel);
    for (i, l) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for &(x, y) in &l.points {
            if !y.is_finite() {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_up { "M" } else { "L" }, sx(x), sy(y));
            pen_up = false;
        }
        let extra: String = l.attrs.iter().map(|(k, v)| format!(r#" {k}="{}""#, escape(v))).collect();
        let _ = writeln!(
            out,
            r#"<path class="series" data-name="{}"{extra} d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            escape(l.name),
            d.trim_end()
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(out, r#"<rect x="{lx}" y="{:.1}" width="12" height="3" fill="{color}"/>"#, ly - 4.0);
        let text = match &l.note {
            Some(n) => format!("{} {}", l.name, n),
            None => l.name.to_string(),
        };
        let _ = writeln!(out, r#"<text class="legend" x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 18.0, escape(&text));
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars; `labels[i]` names bar `i`.
pub(crate) fn bar_plot(title: &str, xlabel: &str, ylabel: &str, labels: &[String], values: &[f64]) -> String {
    let top = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-12) * 1.05;
    let n = values.len().max(1) as f64;
    let bw = (W - LEFT - RIGHT) / n;
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, (0.0, n), (0.0, top), xlabel, ylabel);
    for (i, (&v, label)) in values.iter().zip(labels).enumerate() {
        let h = if v.is_finite() { v / top * (H - BOTTOM - TOP) } else { 0.0 };
        let x = LEFT + i as f64 * bw;
        let _ = writeln!(
            out,
            r#"<rect class="bar" data-label="{}" data-value="{v}" x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            escape(label),
            x + 0.1 * bw,
            H - BOTTOM - h,
            0.8 * bw,
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_deterministic_and_escaped() {
        let l = Line { name: "a<b", points: vec![(1.0, 2.0), (2.0, f64::NAN), (3.0, 1.0)], attrs: vec![], note: None };
        let a = line_plot("t", "x", "y", std::slice::from_ref(&l));
        assert_eq!(a, line_plot("t", "x", "y", &[l]));
        assert!(a.contains("a&lt;b"));
        // The NaN breaks the path into two pen-down segments.
        let d = a.split("class=\"series\"").nth(1).unwrap();
        let d = &d[d.find(" d=\"").unwrap() + 4..];
        let d = &d[..d.find('"').unwrap()];
        assert_eq!(d.matches('M').count(), 2);
    }

    #[test]
    fn bar_plot_marks_values() {
        let s = bar_plot("h", "x", "y", &["0".into(), "5".into()], &[3.0, 1.0]);
        assert_eq!(s.matches("class=\"bar\"").count(), 2);
        assert!(s.contains("data-value=\"3\""));
    }
}
