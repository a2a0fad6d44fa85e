//! Minimal static SVG charts with deterministic output.

use std::fmt::Write;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of one or more `(x, y)` series sharing axes.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    let pts: Vec<&(f64, f64)> = series.iter().flat_map(|(_, s)| s).collect();
    if pts.is_empty() {
        return Err(Error::invalid(format!("chart `{title}` has no points")));
    }
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite(format!("chart `{title}`")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        "<g stroke=\"black\" fill=\"none\"><line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\"/></g>",
        b = H - PAD,
        r = W - PAD
    );
    let label = |out: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"{anchor}\">{}</text>",
            escape(text)
        );
    };
    label(&mut out, PAD - 4.0, H - PAD, "end", &format!("{y0:.4}"));
    label(&mut out, PAD - 4.0, PAD + 4.0, "end", &format!("{y1:.4}"));
    label(&mut out, PAD, H - PAD + 14.0, "middle", &format!("{x0}"));
    label(&mut out, W - PAD, H - PAD + 14.0, "middle", &format!("{x1}"));
    label(&mut out, W / 2.0, H - 10.0, "middle", x_label);
    for (i, (name, s)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>", path.join(" "));
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{color}\">{}</text>",
            W - PAD - 100.0,
            PAD + 12.0 * i as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grayscale heatmap of a `rows × cols` matrix, one cell per entry.
pub fn heatmap(title: &str, m: &[Vec<f64>]) -> Result<String> {
    let cols = m.first().map_or(0, Vec::len);
    if cols == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("heatmap `{title}` needs a non-empty rectangular matrix")));
    }
    let (lo, hi) = m.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite(format!("heatmap `{title}`")));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (cw, ch) = ((W - 2.0 * PAD) / cols as f64, (H - 2.0 * PAD) / m.len() as f64);
    let mut out = String::new();
    header(&mut out, title);
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - (v - lo) / span)).round() as u8;
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                PAD + c as f64 * cw,
                PAD + r as f64 * ch
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
