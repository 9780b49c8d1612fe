//! Deterministic SVG rendering of feature vectors and performance curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::FeatureEmbedding;
use crate::evaluation::PerformanceCurve;
use crate::{Error, Result};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 48.0;
const MARKER_RADIUS: f64 = 6.0;
const LABEL_LIMIT: usize = 10;
const LABEL_ALL_BELOW: usize = 25;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, Default)]
pub struct VectorPlotOptions {
    pub title: Option<String>,
    /// When set to `d`, vectors `d..2d` are knockoffs of `0..d` and are drawn
    /// as squares.
    pub knockoff_pairs: Option<usize>,
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

/// `#rrggbb` for an HSL colour with hue in degrees.
pub fn hsl_to_hex(hue: f64, saturation: f64, lightness: f64) -> String {
    let c = (1.0 - (2.0 * lightness - 1.0).abs()) * saturation;
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = lightness - c / 2.0;
    let byte = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, r##"<?xml version="1.0" encoding="UTF-8"?>"##);
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"##
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#ffffff"/>"##
    );
}

/// Scatter of the feature vectors around the origin. Marker hue encodes
/// the angle; the most important features are labelled.
pub fn render_feature_vectors(e: &FeatureEmbedding, names: &[&str], opts: &VectorPlotOptions) -> Result<String> {
    let n = e.len();
    if names.len() != n {
        return Err(Error::arg(format!("{} names for {n} vectors", names.len())));
    }
    if let Some(d) = opts.knockoff_pairs {
        if 2 * d != n {
            return Err(Error::arg("knockoff plot needs exactly two vectors per feature"));
        }
    }
    let extent = e.vectors().iter().flat_map(|v| [v[0].abs(), v[1].abs()]).fold(0.0, f64::max);
    if extent.is_nan() || extent <= 0.0 {
        return Err(Error::arg("nothing to plot: every feature vector is zero"));
    }
    let extent = extent * 1.1;
    let half = (SIZE - 2.0 * MARGIN) / 2.0;
    let centre = SIZE / 2.0;
    let px = |v: f64| centre + v / extent * half;
    let py = |v: f64| centre - v / extent * half;

    let mut out = String::new();
    header(&mut out, SIZE, SIZE);
    if let Some(t) = &opts.title {
        let _ = writeln!(
            out,
            r##"<text x="{centre:.2}" y="24" text-anchor="middle" font-size="16">{}</text>"##,
            escape(t)
        );
    }
    let (lo, hi) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(out, r##"<g class="axes" stroke="#888888" stroke-width="1">"##);
    let _ = writeln!(out, r##"<line x1="{lo:.2}" y1="{centre:.2}" x2="{hi:.2}" y2="{centre:.2}"/>"##);
    let _ = writeln!(out, r##"<line x1="{centre:.2}" y1="{lo:.2}" x2="{centre:.2}" y2="{hi:.2}"/>"##);
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r##"<text x="{hi:.2}" y="{:.2}" text-anchor="end" font-size="10" fill="#555555">{extent:.3}</text>"##,
        centre - 4.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#555555">{extent:.3}</text>"##,
        centre + 4.0,
        lo + 10.0
    );

    let importance = e.importance();
    let _ = writeln!(out, r##"<g class="markers" stroke="#333333" stroke-width="0.75">"##);
    for (i, v) in e.vectors().iter().enumerate() {
        let (x, y) = (px(v[0]), py(v[1]));
        let (hue, fill) = match e.angle_degrees(i) {
            Some(a) => (format!("{a:.2}"), hsl_to_hex(a, 0.75, 0.5)),
            None => ("none".to_string(), "#999999".to_string()),
        };
        let name = escape(names[i]);
        let knockoff = opts.knockoff_pairs.is_some_and(|d| i >= d);
        if knockoff {
            let r = MARKER_RADIUS;
            let _ = writeln!(
                out,
                r##"<rect class="marker knockoff" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" data-feature="{name}" data-hue="{hue}"/>"##,
                x - r,
                y - r,
                2.0 * r,
                2.0 * r
            );
        } else {
            let _ = writeln!(
                out,
                r##"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="{MARKER_RADIUS:.2}" fill="{fill}" data-feature="{name}" data-hue="{hue}"/>"##
            );
        }
    }
    let _ = writeln!(out, "</g>");

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let labelled = if n <= LABEL_ALL_BELOW { n } else { LABEL_LIMIT };
    let mut chosen: Vec<usize> = order.into_iter().take(labelled).collect();
    chosen.sort_unstable();
    let _ = writeln!(out, r##"<g class="labels" font-size="11" fill="#222222">"##);
    for i in chosen {
        let v = e.vector(i);
        let _ = writeln!(
            out,
            r##"<text class="label" x="{:.2}" y="{:.2}">{}</text>"##,
            px(v[0]) + MARKER_RADIUS + 2.0,
            py(v[1]) - MARKER_RADIUS,
            escape(names[i])
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line chart with one polyline and legend entry per curve.
pub fn render_curves(curves: &[PerformanceCurve], title: &str, y_label: &str) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::arg("no curves to plot"));
    }
    if curves.iter().any(|c| c.metric.is_empty()) {
        return Err(Error::arg("curve without points"));
    }
    let (width, height) = (SIZE, 420.0);
    let legend_w = 140.0;
    let (left, right, top, bottom) = (MARGIN + 12.0, width - legend_w, MARGIN, height - MARGIN);
    let max_k = curves.iter().map(|c| c.metric.len() - 1).max().unwrap_or(0).max(1) as f64;
    let mut lo = curves.iter().flat_map(|c| c.metric.iter().copied()).fold(f64::INFINITY, f64::min);
    let mut hi = curves
        .iter()
        .flat_map(|c| c.metric.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::arg("curve metrics must be finite"));
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |k: f64| left + k / max_k * (right - left);
    let py = |m: f64| bottom - (m - lo) / (hi - lo) * (bottom - top);

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
        (left + right) / 2.0,
        escape(title)
    );
    let _ = writeln!(out, r##"<g class="axes" stroke="#555555" stroke-width="1">"##);
    let _ = writeln!(out, r##"<line x1="{left:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}"/>"##);
    let _ = writeln!(out, r##"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{bottom:.2}"/>"##);
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, r##"<g font-size="10" fill="#333333">"##);
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">features removed / kept (k)</text>"##,
        (left + right) / 2.0,
        height - 10.0
    );
    let _ = writeln!(
        out,
        r##"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"##,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    for t in 0..=4 {
        let m = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{m:.3}</text>"##,
            left - 4.0,
            py(m) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{left:.2}" y="{:.2}" text-anchor="middle">0</text>"##,
        bottom + 14.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{right:.2}" y="{:.2}" text-anchor="middle">{max_k:.0}</text>"##,
        bottom + 14.0
    );
    let _ = writeln!(out, "</g>");

    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c
            .metric
            .iter()
            .enumerate()
            .map(|(k, &m)| format!("{:.2},{:.2}", px(k as f64), py(m)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline class="curve" data-method="{}" fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"##,
            escape(&c.method),
            points.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = right + 12.0;
        let _ = writeln!(
            out,
            r##"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"##,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r##"<text class="legend" x="{:.2}" y="{:.2}" font-size="11">{}</text>"##,
            lx + 24.0,
            ly + 4.0,
            escape(&c.method)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
