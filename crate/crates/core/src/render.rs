//! Static SVG renderings of the layouts.

use std::fmt::Write as _;

use crate::layout::{DotPlotLayout, ListRow, SplitIcicleLayout};
use crate::metrics::color_fraction;

pub const VIEW_WIDTH: f64 = 1000.0;
const ROW_HEIGHT: f64 = 14.0;
const GREY: (f64, f64, f64) = (189.0, 189.0, 189.0);
const RED: (f64, f64, f64) = (203.0, 24.0, 29.0);
const BLUE: (f64, f64, f64) = (33.0, 102.0, 172.0);

fn mix(a: (f64, f64, f64), b: (f64, f64, f64), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64, y: f64| (x + (y - x) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Grey-to-red colour for a drift value scaled by `color_max`.
pub fn drift_color(value: f64, color_max: f64) -> String {
    mix(GREY, RED, color_fraction(value, color_max))
}

/// Blue-grey-red colour for a signed gradient scaled by `scale`.
pub fn gradient_color(gradient: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (gradient.abs() / scale).min(1.0) } else { 0.0 };
    if gradient < 0.0 {
        mix(GREY, BLUE, t)
    } else {
        mix(GREY, RED, t)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn open(out: &mut String, height: f64) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {VIEW_WIDTH} {height}\" width=\"{VIEW_WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
}

/// Icicle with roots on the left. Salient fragments get a black outline,
/// constrained ones a diamond, and reduced groups a shortened bar.
pub fn icicle_svg(layout: &SplitIcicleLayout) -> String {
    let depth = layout.max_depth().max(1) as f64;
    let col = VIEW_WIDTH / depth;
    let height = (layout.rows.len() as f64 * ROW_HEIGHT).max(ROW_HEIGHT);
    let mut out = String::new();
    open(&mut out, height);
    for f in &layout.fragments {
        let group = f.group.map(|g| &layout.groups[g]);
        let (fill, full) = match group {
            Some(g) => (drift_color(g.value, layout.color_max), !g.reduced_height),
            None => (drift_color(f.value, layout.color_max), true),
        };
        let x = f.depth as f64 * col;
        let y = f.row_start as f64 * ROW_HEIGHT;
        let mut h = f.row_span as f64 * ROW_HEIGHT;
        if !full {
            h *= layout.reduced_height_ratio;
        }
        let stroke = if f.salient { "#000000\" stroke-width=\"1.5" } else { "#ffffff\" stroke-width=\"0.5" };
        let _ = write!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{col:.2}\" height=\"{h:.2}\" fill=\"{fill}\" stroke=\"{stroke}\"",
        );
        if let Some(s) = f.split_group {
            let _ = write!(out, " data-split=\"{s}\"");
        }
        if let Some(g) = f.group {
            let _ = write!(out, " data-group=\"{g}\"");
        }
        let _ = writeln!(out, "><title>{} H={:.4}</title></rect>", escape(&f.dim.to_string()), f.value);
        if f.constrained {
            let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">\u{2666}</text>", x + 2.0, y + 10.0);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Depth on x, drift on y; heat cells behind, salient points on top.
pub fn dotplot_svg(layout: &DotPlotLayout) -> String {
    let height = 500.0;
    let margin = 30.0;
    let depth_span = layout.max_depth as f64 + 1.0;
    let x_of = |d: f64| margin + (d + 0.5) / depth_span * (VIEW_WIDTH - 2.0 * margin);
    let y_of = |v: f64| height - margin - v * (height - 2.0 * margin);
    let mut out = String::new();
    open(&mut out, height);
    let max_count = layout.heat_cells.iter().map(|c| c.count).max().unwrap_or(1) as f64;
    for c in &layout.heat_cells {
        let x0 = margin + c.depth_range.0 as f64 / depth_span * (VIEW_WIDTH - 2.0 * margin);
        let x1 = margin + c.depth_range.1 as f64 / depth_span * (VIEW_WIDTH - 2.0 * margin);
        let (y0, y1) = (y_of(c.drift_range.1), y_of(c.drift_range.0));
        let _ = writeln!(
            out,
            "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9e9e9e\" fill-opacity=\"{:.3}\"><title>{} dims</title></rect>",
            (x1 - x0).max(0.0),
            y1 - y0,
            0.1 + 0.6 * c.count as f64 / max_count,
            c.count
        );
    }
    let scale = layout.points.iter().map(|p| p.size).fold(0.0, f64::max);
    for p in &layout.points {
        let r = 3.0 + if scale > 0.0 { 9.0 * p.size / scale } else { 0.0 };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r:.2}\" fill=\"{}\" stroke=\"#000000\" stroke-width=\"0.5\"><title>{} H={:.4} dH={:.4}</title></circle>",
            x_of(p.x as f64),
            y_of(p.y),
            gradient_color(p.gradient, scale),
            escape(&p.dim.to_string()),
            p.y,
            p.gradient
        );
        if p.constrained {
            let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">\u{2666}</text>", x_of(p.x as f64) + r, y_of(p.y));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Horizontal bar per row, longest drift first.
pub fn list_svg(rows: &[ListRow], color_max: f64) -> String {
    let height = (rows.len() as f64 * ROW_HEIGHT).max(ROW_HEIGHT);
    let label_w = 300.0;
    let mut out = String::new();
    open(&mut out, height);
    for (i, r) in rows.iter().enumerate() {
        let y = i as f64 * ROW_HEIGHT;
        let w = r.value * (VIEW_WIDTH - label_w);
        let marker = if r.constrained { "\u{2666} " } else { "" };
        let _ = writeln!(
            out,
            "<text x=\"2\" y=\"{:.2}\">{marker}{}</text><rect x=\"{label_w}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            y + 11.0,
            escape(&r.dim.to_string()),
            y + 1.0,
            ROW_HEIGHT - 2.0,
            drift_color(r.value, color_max)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_ramps() {
        assert_eq!(drift_color(0.0, 0.5), "#bdbdbd");
        assert_eq!(drift_color(0.5, 0.5), "#cb181d");
        assert_eq!(drift_color(0.9, 0.0), "#bdbdbd");
        assert_eq!(gradient_color(-1.0, 1.0), "#2166ac");
        assert_eq!(gradient_color(0.0, 1.0), "#bdbdbd");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b&\"c\""), "a&lt;b&amp;&quot;c&quot;");
    }
}
